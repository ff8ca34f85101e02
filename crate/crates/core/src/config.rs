//! JSON run configuration.
//!
//! Every field has a default, so `{}` is a complete configuration describing
//! the reference experiment: 100 x 100 grid on (0, 10) x (0, 10), 200 gains
//! uniform in [-100, -1], delta = 0.1, no measurement noise.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::NoiseKind;
use crate::error::{Error, Result};
use crate::grid::{Grid, Signal};
use crate::inversion::TikhonovConfig;
use crate::observer::{LambdaBank, ObserverScheme, Spacing};
use crate::process::{reference_growth, Growth, Scenario, SensorModel, TruncatedGaussian};

/// A time signal described in closed form or by samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Zero,
    Constant {
        value: f64,
    },
    /// `intercept + slope * (t - t0)`.
    Linear {
        intercept: f64,
        slope: f64,
    },
    TruncatedGaussian {
        #[serde(default = "default_peak_time")]
        peak_time: f64,
        #[serde(default = "one")]
        std_dev: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "default_support")]
        support: [f64; 2],
    },
    /// `0.9 + 0.1 exp(-t / 5)`.
    ReferenceGrowth,
    /// Piecewise-linear interpolation of the given samples.
    Samples {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

fn default_peak_time() -> f64 {
    3.0
}

fn one() -> f64 {
    1.0
}

fn default_support() -> [f64; 2] {
    [0.0, 6.0]
}

impl SignalSpec {
    pub fn sample(&self, grid: &Grid) -> Result<Signal> {
        match self {
            SignalSpec::Zero => Signal::constant(grid, 0.0),
            SignalSpec::Constant { value } => Signal::constant(grid, *value),
            SignalSpec::Linear { intercept, slope } => Signal::from_fn(grid, |t| intercept + slope * (t - grid.t0)),
            SignalSpec::TruncatedGaussian { peak_time, std_dev, amplitude, support } => {
                if !(*std_dev > 0.0 && support[1] > support[0]) {
                    return Err(Error::Domain("truncated Gaussian needs std_dev > 0 and an increasing support".into()));
                }
                let g = TruncatedGaussian {
                    peak_time: *peak_time,
                    std_dev: *std_dev,
                    amplitude: *amplitude,
                    support: (support[0], support[1]),
                };
                Signal::from_fn(grid, |t| g.eval(t))
            }
            SignalSpec::ReferenceGrowth => Signal::from_fn(grid, reference_growth),
            SignalSpec::Samples { times, values } => {
                let s = Signal::new(times.clone(), values.clone())?;
                Signal::from_fn(grid, |t| s.at(t))
            }
        }
    }
}

/// Initial size distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Psi0Spec {
    Zero,
    /// Smooth `amplitude * cos^2` bump on `[center - half_width, center + half_width]`.
    Bump {
        center: f64,
        half_width: f64,
        amplitude: f64,
    },
    /// One value per size node.
    Samples {
        values: Vec<f64>,
    },
}

impl Psi0Spec {
    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        match self {
            Psi0Spec::Zero => Ok(vec![0.0; grid.n_x]),
            Psi0Spec::Bump { center, half_width, amplitude } => {
                if !(*half_width > 0.0) {
                    return Err(Error::Domain("bump half_width must be > 0".into()));
                }
                Ok((0..grid.n_x)
                    .map(|j| {
                        let s = (grid.x(j) - center) / half_width;
                        if s.abs() >= 1.0 {
                            0.0
                        } else {
                            amplitude * (0.5 * PI * s).cos().powi(2)
                        }
                    })
                    .collect())
            }
            Psi0Spec::Samples { values } => Ok(values.clone()),
        }
    }
}

/// Growth data as configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrowthSpec {
    Direct {
        rate: SignalSpec,
    },
    /// `G = k_g (C_c - C*) / C*`.
    Concentration {
        c_c: SignalSpec,
        c_star: SignalSpec,
        k_g: f64,
    },
}

impl Default for GrowthSpec {
    fn default() -> Self {
        GrowthSpec::Direct { rate: SignalSpec::ReferenceGrowth }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub psi0: Psi0Spec,
    pub nucleation: SignalSpec,
    pub growth: GrowthSpec,
    pub sensor: SensorModel,
    /// Right edge of the initial support; inferred from `psi0` when absent.
    pub xbar: Option<f64>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            psi0: Psi0Spec::Zero,
            nucleation: SignalSpec::TruncatedGaussian {
                peak_time: default_peak_time(),
                std_dev: 1.0,
                amplitude: 1.0,
                support: default_support(),
            },
            growth: GrowthSpec::default(),
            sensor: SensorModel::default(),
            xbar: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaBankSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub spacing: Spacing,
}

impl Default for LambdaBankSpec {
    fn default() -> Self {
        LambdaBankSpec { min: -100.0, max: -1.0, count: 200, spacing: Spacing::Uniform }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverSpec {
    /// Common initial state of every observer.
    pub z0: f64,
    pub scheme: ObserverScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Standard deviation as a fraction of `max |y|`.
    pub alpha: f64,
    pub seed: u64,
    pub kind: NoiseKind,
}

/// Analysis checks the pipeline can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `max_i |z_i(t1) - T_i(t1)| / |T_i(t1)|`.
    ObserverTracking,
    /// Relative L2 error of the estimate at `t1`.
    ReconstructionError,
    /// Distance in cells between estimated and true peaks at `t1`.
    PeakLocation,
    /// Norm/residual monotonicity over the regularization sweep.
    TikhonovTradeoff,
    /// Cubic fit residual of the reparametrized output.
    CubicOutput,
    /// Boundary data recovered from output derivatives at `t0`.
    BoundaryRecovery,
    /// First moment identity against a finite difference of the output.
    MomentIdentity,
}

impl CheckKind {
    pub fn default_tolerance(self) -> f64 {
        match self {
            CheckKind::ObserverTracking => 0.05,
            CheckKind::ReconstructionError => 0.5,
            CheckKind::PeakLocation => 5.0,
            CheckKind::TikhonovTradeoff => 1e-9,
            CheckKind::CubicOutput => 1e-6,
            CheckKind::BoundaryRecovery => 1e-3,
            CheckKind::MomentIdentity => 5e-2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::ObserverTracking => "observer_tracking",
            CheckKind::ReconstructionError => "reconstruction_error",
            CheckKind::PeakLocation => "peak_location",
            CheckKind::TikhonovTradeoff => "tikhonov_tradeoff",
            CheckKind::CubicOutput => "cubic_output",
            CheckKind::BoundaryRecovery => "boundary_recovery",
            CheckKind::MomentIdentity => "moment_identity",
        }
    }
}

/// A check given either by name or as `{ "name": ..., "tolerance": ... }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CheckSpec {
    Name(CheckKind),
    Detailed { name: CheckKind, tolerance: Option<f64> },
}

impl CheckSpec {
    pub fn kind(&self) -> CheckKind {
        match self {
            CheckSpec::Name(k) | CheckSpec::Detailed { name: k, .. } => *k,
        }
    }

    pub fn tolerance(&self) -> f64 {
        match self {
            CheckSpec::Detailed { tolerance: Some(t), .. } => *t,
            _ => self.kind().default_tolerance(),
        }
    }
}

fn default_checks() -> Vec<CheckSpec> {
    vec![CheckSpec::Name(CheckKind::ObserverTracking), CheckSpec::Name(CheckKind::TikhonovTradeoff)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: Grid,
    pub scenario: ScenarioSpec,
    pub lambda_bank: LambdaBankSpec,
    pub observer: ObserverSpec,
    pub tikhonov: TikhonovConfig,
    pub noise: NoiseSpec,
    pub outputs: PathBuf,
    pub checks: Vec<CheckSpec>,
    /// Extra regularization weights; each writes its own estimate file.
    pub delta_sweep: Vec<f64>,
    /// Record per-step solve times in `metrics.csv` (otherwise written as 0).
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: Grid::reference(),
            scenario: ScenarioSpec::default(),
            lambda_bank: LambdaBankSpec::default(),
            observer: ObserverSpec::default(),
            tikhonov: TikhonovConfig::default(),
            noise: NoiseSpec::default(),
            outputs: PathBuf::from("out"),
            checks: default_checks(),
            delta_sweep: Vec::new(),
            timing: false,
        }
    }
}

fn field_error(field: &str, err: Error) -> Error {
    let rule = match err {
        Error::Domain(m) | Error::InvalidScenario(m) | Error::Shape(m) | Error::Precondition(m) => m,
        other => other.to_string(),
    };
    Error::config(field, rule)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks every invariant eagerly, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate().map_err(|e| field_error("grid", e))?;
        self.lambda_bank()?;
        let t = &self.tikhonov;
        if !(t.delta.is_finite() && t.delta >= 0.0) {
            return Err(Error::config("tikhonov.delta", "must be >= 0"));
        }
        if !(t.tol > 0.0) {
            return Err(Error::config("tikhonov.tol", "must be > 0"));
        }
        if t.max_iter == 0 {
            return Err(Error::config("tikhonov.max_iter", "must be >= 1"));
        }
        if !(self.noise.alpha.is_finite() && self.noise.alpha >= 0.0) {
            return Err(Error::config("noise.alpha", "must be >= 0"));
        }
        if !self.observer.z0.is_finite() {
            return Err(Error::config("observer.z0", "must be finite"));
        }
        if let Some(d) = self.delta_sweep.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::config("delta_sweep", format!("weights must be >= 0, got {d}")));
        }
        for c in &self.checks {
            if !(c.tolerance() >= 0.0) {
                return Err(Error::config(format!("checks.{}.tolerance", c.kind().name()), "must be >= 0"));
            }
        }
        if self.outputs.as_os_str().is_empty() {
            return Err(Error::config("outputs", "must name a directory"));
        }
        self.scenario()?;
        Ok(())
    }

    pub fn lambda_bank(&self) -> Result<LambdaBank> {
        let b = &self.lambda_bank;
        if !(b.max < 0.0) {
            return Err(Error::config(
                "lambda_bank.max",
                format!("observer gains must be strictly negative, got max = {}", b.max),
            ));
        }
        if !(b.min < b.max) {
            return Err(Error::config("lambda_bank.min", format!("must be < max, got [{}, {}]", b.min, b.max)));
        }
        if b.count == 0 {
            return Err(Error::config("lambda_bank.count", "must be >= 1"));
        }
        LambdaBank::spaced(b.min, b.max, b.count, b.spacing).map_err(|e| field_error("lambda_bank", e))
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let grid = self.grid;
        let spec = &self.scenario;
        let psi0 = spec.psi0.sample(&grid).map_err(|e| field_error("scenario.psi0", e))?;
        let u = spec.nucleation.sample(&grid).map_err(|e| field_error("scenario.nucleation", e))?;
        let growth = match &spec.growth {
            GrowthSpec::Direct { rate } => {
                Growth::Direct(rate.sample(&grid).map_err(|e| field_error("scenario.growth.rate", e))?)
            }
            GrowthSpec::Concentration { c_c, c_star, k_g } => Growth::Concentration {
                c_c: c_c.sample(&grid).map_err(|e| field_error("scenario.growth.c_c", e))?,
                c_star: c_star.sample(&grid).map_err(|e| field_error("scenario.growth.c_star", e))?,
                k_g: *k_g,
            },
        };
        spec.sensor.validate().map_err(|e| field_error("scenario.sensor", e))?;
        Scenario::new(grid, psi0, u, growth, spec.sensor, spec.xbar).map_err(|e| field_error("scenario", e))
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    RunConfig::from_json(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule_of(err: Error) -> (String, String) {
        match err {
            Error::Config { field, rule } => (field, rule),
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn empty_object_gives_reference_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!((c.grid.n_x, c.grid.n_t), (100, 100));
        assert_eq!(c.lambda_bank.count, 200);
        assert_eq!((c.lambda_bank.min, c.lambda_bank.max), (-100.0, -1.0));
        assert_eq!(c.tikhonov.delta, 0.1);
        assert_eq!(c.noise.alpha, 0.0);
        let bank = c.lambda_bank().unwrap();
        assert_eq!(bank.len(), 200);
    }

    #[test]
    fn nonnegative_gain_is_rejected() {
        let err = RunConfig::from_json(r#"{"lambda_bank": {"max": 0.0}}"#).unwrap_err();
        let (field, rule) = rule_of(err);
        assert_eq!(field, "lambda_bank.max");
        assert!(rule.contains("strictly negative"));
    }

    #[test]
    fn zero_tail_violation_is_rejected() {
        let json = r#"{"scenario": {"growth": {"model": "direct", "rate": {"kind": "constant", "value": 1.2}}}}"#;
        let (field, rule) = rule_of(RunConfig::from_json(json).unwrap_err());
        assert_eq!(field, "scenario");
        assert!(rule.contains("zero-tail"), "{rule}");
    }

    #[test]
    fn incompatible_corner_is_rejected() {
        let json = r#"{"scenario": {"nucleation": {"kind": "constant", "value": 1.0}}}"#;
        let (_, rule) = rule_of(RunConfig::from_json(json).unwrap_err());
        assert!(rule.contains("u(t0) = psi0(x_min)"), "{rule}");
    }

    #[test]
    fn parse_errors_carry_the_line() {
        match RunConfig::from_json("{\n  \"grid\": {\n    \"n_x\": ,\n  }\n}") {
            Err(Error::Parse(m)) => assert!(m.contains("line 3"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::from_json(r#"{"bogus": 1}"#), Err(Error::Parse(_))));
    }

    #[test]
    fn checks_accept_names_and_tolerances() {
        let json = r#"{"checks": ["cubic_output", {"name": "peak_location", "tolerance": 3}]}"#;
        let c = RunConfig::from_json(json).unwrap();
        assert_eq!(c.checks[0].kind(), CheckKind::CubicOutput);
        assert_eq!(c.checks[0].tolerance(), 1e-6);
        assert_eq!(c.checks[1].tolerance(), 3.0);
        let bad = r#"{"checks": [{"name": "peak_location", "tolerance": -1}]}"#;
        let (field, _) = rule_of(RunConfig::from_json(bad).unwrap_err());
        assert_eq!(field, "checks.peak_location.tolerance");
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }
}
