//! End-to-end orchestration: simulate, observe, reconstruct, analyze.
//!
//! Each stage writes CSV files to the output directory and the later stages
//! read them back, so any stage can be rerun on its own. The full run keeps
//! intermediate results in memory instead of rereading them.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::{
    add_noise, cubic_output_check, moment_derivatives, one_sided_derivatives, peak_index, recover_boundary,
    relative_l2, time_reparametrize, time_reparametrize_field,
};
use crate::config::{CheckKind, CheckSpec, RunConfig};
use crate::csvio::{self, CheckRow, MetricsRow};
use crate::error::{Error, Result};
use crate::grid::Signal;
use crate::inversion::{reconstruct, tikhonov_solve, EstimateField, SolveMode, TikhonovConfig};
use crate::observer::{functional_t, observation_matrix, run_observer_bank, KernelBank, KernelCache, ObserverBank};
use crate::process::{output_signal, simulate, NdfField, Scenario};

pub const NDF_FILE: &str = "ndf.csv";
pub const OUTPUT_FILE: &str = "output.csv";
pub const OBSERVERS_FILE: &str = "observers.csv";
pub const ESTIMATE_FILE: &str = "estimate.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKS_FILE: &str = "checks.csv";
pub const CACHE_DIR: &str = "kernel_cache";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Observe,
    Reconstruct,
    Analyze,
    Run,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Observe => "observe",
            Stage::Reconstruct => "reconstruct",
            Stage::Analyze => "analyze",
            Stage::Run => "run",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulate" => Ok(Stage::Simulate),
            "observe" => Ok(Stage::Observe),
            "reconstruct" => Ok(Stage::Reconstruct),
            "analyze" => Ok(Stage::Analyze),
            "run" => Ok(Stage::Run),
            other => Err(Error::Parse(format!(
                "unknown stage `{other}` (expected simulate, observe, reconstruct, analyze or run)"
            ))),
        }
    }
}

/// What a pipeline invocation produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub stage: Stage,
    pub written: Vec<PathBuf>,
    pub checks: Vec<CheckRow>,
    /// `Some(true)` when kernels came from the cache.
    pub kernel_cache_hit: Option<bool>,
}

impl RunReport {
    /// True when every enabled check passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// An estimate together with the regularization weight and file suffix.
struct Labeled {
    delta: f64,
    suffix: String,
    estimate: EstimateField,
}

struct Context<'a> {
    config: &'a RunConfig,
    scenario: Scenario,
    out: PathBuf,
    report: RunReport,
    kernels: Option<KernelBank>,
}

fn in_stage<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage { stage: stage.name(), source: Box::new(other) },
    })
}

/// Runs one stage (or the whole chain) for a validated configuration.
pub fn run_pipeline(config: &RunConfig, stage: Stage) -> Result<RunReport> {
    in_stage(Stage::Run, config.validate())?;
    let out = config.outputs.clone();
    fs::create_dir_all(&out)
        .map_err(|e| Error::config("outputs", format!("cannot create `{}`: {e}", out.display())))?;
    let mut ctx = Context {
        config,
        scenario: config.scenario()?,
        out,
        report: RunReport { stage, written: Vec::new(), checks: Vec::new(), kernel_cache_hit: None },
        kernels: None,
    };
    match stage {
        Stage::Simulate => {
            in_stage(stage, ctx.simulate())?;
        }
        Stage::Observe => {
            let y = in_stage(stage, csvio::read_output(ctx.path(OUTPUT_FILE)))?.1;
            in_stage(stage, ctx.observe(&y))?;
        }
        Stage::Reconstruct => {
            let obs = in_stage(stage, csvio::read_observers(ctx.path(OBSERVERS_FILE)))?;
            let truth = ctx.read_truth_if_present();
            in_stage(stage, ctx.reconstruct(&obs, truth.as_ref()))?;
        }
        Stage::Analyze => {
            let inputs = in_stage(stage, ctx.read_analysis_inputs())?;
            in_stage(stage, ctx.analyze(&inputs))?;
        }
        Stage::Run => {
            let (field, y, y_noisy) = in_stage(Stage::Simulate, ctx.simulate())?;
            let obs = in_stage(Stage::Observe, ctx.observe(&y_noisy))?;
            let estimates = in_stage(Stage::Reconstruct, ctx.reconstruct(&obs, Some(&field)))?;
            let inputs = AnalysisInputs { truth: Some(field), y: Some(y), observers: Some(obs), estimates };
            in_stage(Stage::Analyze, ctx.analyze(&inputs))?;
        }
    }
    Ok(ctx.report)
}

struct AnalysisInputs {
    truth: Option<NdfField>,
    y: Option<Signal>,
    observers: Option<ObserverBank>,
    estimates: Vec<Labeled>,
}

fn delta_suffix(delta: f64) -> String {
    format!("_delta_{delta}")
}

impl Context<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn record(&mut self, path: PathBuf) {
        self.report.written.push(path);
    }

    fn simulate(&mut self) -> Result<(NdfField, Signal, Signal)> {
        let field = simulate(&self.scenario)?;
        let y = output_signal(&field)?;
        let noise = &self.config.noise;
        let y_noisy = add_noise(&y, noise.alpha, noise.seed, noise.kind)?;
        let sensor = *self.scenario.sensor();
        let c_s = y_noisy.map(|v| sensor.concentration_from_moment(v))?;
        let ndf = self.path(NDF_FILE);
        csvio::write_field(&ndf, &field)?;
        self.record(ndf);
        let output = self.path(OUTPUT_FILE);
        csvio::write_output(&output, &y, &y_noisy, &c_s)?;
        self.record(output);
        Ok((field, y, y_noisy))
    }

    fn observe(&mut self, y: &Signal) -> Result<ObserverBank> {
        let grid = *self.scenario.grid();
        if !y.on_grid(&grid) {
            return Err(Error::Shape("measured output is not sampled on the configured time grid".into()));
        }
        let bank = self.config.lambda_bank()?;
        let z0 = vec![self.config.observer.z0; bank.len()];
        let obs = run_observer_bank(&bank, y, &z0, self.config.observer.scheme)?;
        let path = self.path(OBSERVERS_FILE);
        csvio::write_observers(&path, &obs)?;
        self.record(path);
        Ok(obs)
    }

    fn kernels(&mut self, obs: &ObserverBank) -> Result<KernelBank> {
        if let Some(k) = &self.kernels {
            if k.lambdas() == obs.lambdas() {
                return Ok(k.clone());
            }
        }
        let cache = KernelCache::new(self.out.join(CACHE_DIR));
        let (bank, hit) = cache.load_or_compute(obs.lambdas(), self.scenario.growth_rate(), self.scenario.grid())?;
        self.report.kernel_cache_hit = Some(hit);
        self.kernels = Some(bank.clone());
        Ok(bank)
    }

    fn weights(&self) -> Vec<(f64, String)> {
        if self.config.delta_sweep.is_empty() {
            vec![(self.config.tikhonov.delta, String::new())]
        } else {
            self.config.delta_sweep.iter().map(|&d| (d, delta_suffix(d))).collect()
        }
    }

    fn reconstruct(&mut self, obs: &ObserverBank, truth: Option<&NdfField>) -> Result<Vec<Labeled>> {
        let kernels = self.kernels(obs)?;
        let grid = *kernels.grid();
        if let Some(t) = truth {
            if t.grid() != &grid {
                return Err(Error::Shape("reference field grid differs from the run grid".into()));
            }
        }
        let mut out = Vec::new();
        for (delta, suffix) in self.weights() {
            let cfg = TikhonovConfig { delta, ..self.config.tikhonov };
            let estimate = reconstruct(&kernels, obs, &cfg)?;
            let rows: Vec<MetricsRow> = (0..grid.n_t)
                .map(|k| MetricsRow {
                    k,
                    t: grid.t(k),
                    residual: estimate.residuals[k],
                    norm: estimate.norms[k],
                    iterations: estimate.iterations[k],
                    wall_time_ms: if self.config.timing { estimate.wall_time_ms[k] } else { 0.0 },
                    rel_l2_error: truth.map_or(f64::NAN, |t| relative_l2(estimate.row(k), t.row(k))),
                })
                .collect();
            let est_path = self.path(&format!("estimate{suffix}.csv"));
            csvio::write_field(&est_path, estimate.field())?;
            self.record(est_path);
            let met_path = self.path(&format!("metrics{suffix}.csv"));
            csvio::write_metrics(&met_path, &rows)?;
            self.record(met_path);
            out.push(Labeled { delta, suffix, estimate });
        }
        Ok(out)
    }

    fn read_truth_if_present(&self) -> Option<NdfField> {
        csvio::read_field(self.path(NDF_FILE)).ok()
    }

    fn read_analysis_inputs(&self) -> Result<AnalysisInputs> {
        let read_opt = |name: &str| -> Option<PathBuf> {
            let p = self.path(name);
            p.exists().then_some(p)
        };
        let truth = read_opt(NDF_FILE).map(csvio::read_field).transpose()?;
        let y = read_opt(OUTPUT_FILE).map(|p| csvio::read_output(p).map(|o| o.0)).transpose()?;
        let observers = read_opt(OBSERVERS_FILE).map(csvio::read_observers).transpose()?;
        let mut estimates = Vec::new();
        for (delta, suffix) in self.weights() {
            if let Some(p) = read_opt(&format!("estimate{suffix}.csv")) {
                let field = csvio::read_field(p)?;
                estimates.push(Labeled { delta, suffix, estimate: EstimateField::from_field(field) });
            }
        }
        Ok(AnalysisInputs { truth, y, observers, estimates })
    }

    fn analyze(&mut self, inputs: &AnalysisInputs) -> Result<()> {
        let checks: Vec<CheckSpec> = self.config.checks.clone();
        let mut rows = Vec::new();
        for check in checks {
            let tol = check.tolerance();
            let kind = check.kind();
            let missing = |what: &str| {
                Error::Precondition(format!("check `{}` needs {what}; run the earlier stages first", kind.name()))
            };
            match kind {
                CheckKind::ObserverTracking => {
                    let truth = inputs.truth.as_ref().ok_or_else(|| missing(NDF_FILE))?;
                    let obs = inputs.observers.as_ref().ok_or_else(|| missing(OBSERVERS_FILE))?;
                    let value = self.tracking_error(truth, obs)?;
                    rows.push(row(kind.name().into(), value, tol, value <= tol));
                }
                CheckKind::ReconstructionError | CheckKind::PeakLocation => {
                    let truth = inputs.truth.as_ref().ok_or_else(|| missing(NDF_FILE))?;
                    if inputs.estimates.is_empty() {
                        return Err(missing(ESTIMATE_FILE));
                    }
                    let last = truth.grid().n_t - 1;
                    for l in &inputs.estimates {
                        let (est, tru) = (l.estimate.row(last), truth.row(last));
                        let value = if kind == CheckKind::ReconstructionError {
                            relative_l2(est, tru)
                        } else {
                            (peak_index(est) as f64 - peak_index(tru) as f64).abs()
                        };
                        let name = if l.suffix.is_empty() {
                            kind.name().to_owned()
                        } else {
                            format!("{}[delta={}]", kind.name(), l.delta)
                        };
                        rows.push(row(name, value, tol, value <= tol));
                    }
                }
                CheckKind::TikhonovTradeoff => {
                    let obs = inputs.observers.as_ref().ok_or_else(|| missing(OBSERVERS_FILE))?;
                    let value = self.tradeoff_violation(obs)?;
                    rows.push(row(kind.name().into(), value, tol, value <= tol));
                }
                CheckKind::CubicOutput => {
                    let y = inputs.y.as_ref().ok_or_else(|| missing(OUTPUT_FILE))?;
                    let value = cubic_output_check(&time_reparametrize(y, self.scenario.growth_rate())?)?;
                    rows.push(row(kind.name().into(), value, tol, value <= tol));
                }
                CheckKind::BoundaryRecovery => {
                    let y = inputs.y.as_ref().ok_or_else(|| missing(OUTPUT_FILE))?;
                    let value = self.boundary_error(y)?;
                    rows.push(row(kind.name().into(), value, tol, value <= tol));
                }
                CheckKind::MomentIdentity => {
                    let truth = inputs.truth.as_ref().ok_or_else(|| missing(NDF_FILE))?;
                    let y = inputs.y.as_ref().ok_or_else(|| missing(OUTPUT_FILE))?;
                    let value = self.moment_identity_error(truth, y)?;
                    rows.push(row(kind.name().into(), value, tol, value <= tol));
                }
            }
        }
        let path = self.path(CHECKS_FILE);
        csvio::write_checks(&path, &rows)?;
        self.record(path);
        self.report.checks = rows;
        Ok(())
    }

    fn tracking_error(&mut self, truth: &NdfField, obs: &ObserverBank) -> Result<f64> {
        let kernels = self.kernels(obs)?;
        let last = truth.grid().n_t - 1;
        let z = obs.snapshot(last);
        let mut worst = 0.0f64;
        for (i, zi) in z.iter().enumerate() {
            let t = functional_t(&kernels.kernel(i), truth, last)?;
            worst = worst.max((t - zi).abs() / t.abs());
        }
        Ok(worst)
    }

    /// Largest relative increase of the norm or decrease of the residual
    /// between consecutive weights, over every identifiable time node.
    fn tradeoff_violation(&mut self, obs: &ObserverBank) -> Result<f64> {
        let kernels = self.kernels(obs)?;
        let mut deltas: Vec<f64> = if self.config.delta_sweep.len() >= 2 {
            self.config.delta_sweep.clone()
        } else {
            let d = if self.config.tikhonov.delta > 0.0 { self.config.tikhonov.delta } else { 0.1 };
            vec![0.5 * d, d, 2.0 * d]
        };
        deltas.retain(|d| *d > 0.0);
        deltas.sort_by(f64::total_cmp);
        let n = kernels.grid().n_x;
        let mut worst = 0.0f64;
        for k in 1..kernels.grid().n_t {
            let a = observation_matrix(&kernels, k)?;
            let z = obs.snapshot(k);
            let sols = deltas
                .iter()
                .map(|&d| {
                    let cfg = TikhonovConfig { delta: d, mode: SolveMode::ClosedForm, ..self.config.tikhonov };
                    tikhonov_solve(&a, &z, &cfg, &vec![0.0; n])
                })
                .collect::<Result<Vec<_>>>()?;
            for w in sols.windows(2) {
                let norm_up = (w[1].norm - w[0].norm) / w[0].norm.max(f64::MIN_POSITIVE);
                let res_down = (w[0].residual - w[1].residual) / w[0].residual.max(f64::MIN_POSITIVE);
                worst = worst.max(norm_up).max(res_down);
            }
        }
        Ok(worst)
    }

    fn boundary_error(&self, y: &Signal) -> Result<f64> {
        let rate = self.scenario.growth_rate();
        let y_tilde = time_reparametrize(y, rate)?;
        let recovered = recover_boundary(one_sided_derivatives(&y_tilde)?, self.scenario.grid().x_min)?;
        let u_tilde = time_reparametrize(self.scenario.nucleation(), rate)?;
        let du = one_sided_derivatives(&u_tilde)?;
        let reference = [u_tilde.values()[0], du[0], du[1]];
        let scale = reference.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err = recovered.iter().zip(reference).fold(0.0f64, |a, (r, t)| a.max((r - t).abs()));
        Ok(if scale > 0.0 { err / scale } else { err })
    }

    fn moment_identity_error(&self, truth: &NdfField, y: &Signal) -> Result<f64> {
        let rate = self.scenario.growth_rate();
        let field = time_reparametrize_field(truth, rate)?;
        let u = time_reparametrize(self.scenario.nucleation(), rate)?;
        let y_tilde = time_reparametrize(y, rate)?;
        let unit = Signal::constant(field.grid(), 1.0)?;
        let d = moment_derivatives(&field, &u, &unit)?;
        let h = field.grid().dt();
        let yv = y_tilde.values();
        let mut err = 0.0f64;
        for (i, &v) in d.y1.values().iter().enumerate() {
            let k = i + 2;
            let fd = (yv[k + 1] - yv[k - 1]) / (2.0 * h);
            err = err.max((v - fd).abs());
        }
        let scale = d.y1.max_abs();
        Ok(if scale > 0.0 { err / scale } else { err })
    }
}

fn row(quantity: String, value: f64, tolerance: f64, pass: bool) -> CheckRow {
    CheckRow { quantity, value, tolerance, pass }
}

/// Convenience: run the full chain with the configuration at `path`.
pub fn run_from_file(path: &Path) -> Result<RunReport> {
    let config = crate::config::load_config(path)?;
    run_pipeline(&config, Stage::Run)
}
