//! Observability checks and experiment instrumentation.
//!
//! Under unit growth speed the moments `m_r = int psi x^r dx` obey
//!
//! ```text
//! y'    = 3 m_2 + x_min^3 u
//! y''   = 6 m_1 + 3 x_min^2 u + x_min^3 u'
//! y'''  = 6 m_0 + 6 x_min u + 3 x_min^2 u' + x_min^3 u''
//! y'''' = 6 u + 6 x_min u' + 3 x_min^2 u'' + x_min^3 u'''
//! ```
//!
//! With an empty seed the first three rows at `t0` form a triangular system in
//! `(u, u', u'')`, so the nucleation is determined by `y` when `x_min > 0`.
//! With `u = 0` the output is a cubic in time and only four moments of the
//! initial distribution are seen.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Signal};
use crate::process::{weighted_moment, CumulativeGrowth, NdfField};

/// Successive time derivatives of the third-moment output, sampled on the
/// interior time nodes `2..=n_t-3`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentDerivatives {
    pub y1: Signal,
    pub y2: Signal,
    pub y3: Signal,
    pub y4: Signal,
}

fn require_unit_speed(rate: &Signal) -> Result<()> {
    if rate.values().iter().any(|g| (g - 1.0).abs() > 1e-12) {
        return Err(Error::Precondition(
            "moment identities assume unit growth speed; apply time_reparametrize first".into(),
        ));
    }
    Ok(())
}

fn require_uniform(times: &[f64], min_len: usize) -> Result<f64> {
    if times.len() < min_len {
        return Err(Error::Domain(format!("need at least {min_len} samples, got {}", times.len())));
    }
    let h = times[1] - times[0];
    if times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h) {
        return Err(Error::Domain("samples must be uniformly spaced".into()));
    }
    Ok(h)
}

/// Evaluates the moment identities on the simulated field, with derivatives
/// of `u` taken by centred second-order differences.
pub fn moment_derivatives(field: &NdfField, u: &Signal, rate: &Signal) -> Result<MomentDerivatives> {
    require_unit_speed(rate)?;
    let grid = field.grid();
    if !u.on_grid(grid) {
        return Err(Error::Shape("nucleation signal is not sampled on the field grid".into()));
    }
    let h = require_uniform(u.times(), 5)?;
    let x = grid.x_min;
    let (x2, x3) = (x * x, x * x * x);
    let uv = u.values();
    let interior: Vec<usize> = (2..grid.n_t - 2).collect();
    let times: Vec<f64> = interior.iter().map(|&k| grid.t(k)).collect();
    let mut y = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for &k in &interior {
        let u0 = uv[k];
        let d1 = (uv[k + 1] - uv[k - 1]) / (2.0 * h);
        let d2 = (uv[k + 1] - 2.0 * uv[k] + uv[k - 1]) / (h * h);
        let d3 = (uv[k + 2] - 2.0 * uv[k + 1] + 2.0 * uv[k - 1] - uv[k - 2]) / (2.0 * h * h * h);
        let m0 = weighted_moment(field, k, 0);
        let m1 = weighted_moment(field, k, 1);
        let m2 = weighted_moment(field, k, 2);
        y[0].push(3.0 * m2 + x3 * u0);
        y[1].push(6.0 * m1 + 3.0 * x2 * u0 + x3 * d1);
        y[2].push(6.0 * m0 + 6.0 * x * u0 + 3.0 * x2 * d1 + x3 * d2);
        y[3].push(6.0 * u0 + 6.0 * x * d1 + 3.0 * x2 * d2 + x3 * d3);
    }
    let [y1, y2, y3, y4] = y;
    Ok(MomentDerivatives {
        y1: Signal::new(times.clone(), y1)?,
        y2: Signal::new(times.clone(), y2)?,
        y3: Signal::new(times.clone(), y3)?,
        y4: Signal::new(times, y4)?,
    })
}

/// `(y', y'', y''')` at `t0` produced by the boundary data `(u, u', u'')` of an
/// empty-seed run.
pub fn boundary_moment_derivatives(u: [f64; 3], x_min: f64) -> [f64; 3] {
    let (x, x2, x3) = (x_min, x_min * x_min, x_min.powi(3));
    [x3 * u[0], 3.0 * x2 * u[0] + x3 * u[1], 6.0 * x * u[0] + 3.0 * x2 * u[1] + x3 * u[2]]
}

/// Back-substitution of the triangular boundary system: returns
/// `(u(t0), u'(t0), u''(t0))` from `(y'(t0), y''(t0), y'''(t0))`.
pub fn recover_boundary(y_derivs: [f64; 3], x_min: f64) -> Result<[f64; 3]> {
    if !(x_min > 0.0) {
        return Err(Error::Singular(format!(
            "the boundary system has a zero diagonal for x_min = {x_min}; recovery needs x_min > 0"
        )));
    }
    let (x, x2, x3) = (x_min, x_min * x_min, x_min.powi(3));
    let [d1, d2, d3] = y_derivs;
    let u0 = d1 / x3;
    let u1 = (d2 - 3.0 * x2 * u0) / x3;
    let u2 = (d3 - 6.0 * x * u0 - 3.0 * x2 * u1) / x3;
    Ok([u0, u1, u2])
}

/// One-sided second-order estimates of `(y', y'', y''')` at the first sample.
pub fn one_sided_derivatives(y: &Signal) -> Result<[f64; 3]> {
    let h = require_uniform(y.times(), 5)?;
    let v = y.values();
    let d1 = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    let d2 = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h);
    let d3 = (-5.0 * v[0] + 18.0 * v[1] - 24.0 * v[2] + 14.0 * v[3] - 3.0 * v[4]) / (2.0 * h.powi(3));
    Ok([d1, d2, d3])
}

fn stretched_times(rate: &Signal) -> Result<(CumulativeGrowth, Vec<f64>)> {
    if let Some(g) = rate.values().iter().find(|g| !(**g > 0.0)) {
        return Err(Error::Domain(format!("time reparametrization needs a positive growth rate, found {g}")));
    }
    let cumulative = CumulativeGrowth::new(rate);
    let n = rate.len();
    let (t0, total) = (rate.start(), cumulative.total());
    let stretched =
        (0..n).map(|k| if k + 1 == n { t0 + total } else { t0 + total * k as f64 / (n - 1) as f64 }).collect();
    Ok((cumulative, stretched))
}

/// Resamples a signal on a uniform grid in `t~ = t0 + int_{t0}^t G`.
pub fn time_reparametrize(signal: &Signal, rate: &Signal) -> Result<Signal> {
    let (cumulative, stretched) = stretched_times(rate)?;
    let t0 = rate.start();
    let values = stretched.iter().map(|&s| Ok(signal.at(cumulative.inverse(s - t0)?))).collect::<Result<Vec<_>>>()?;
    Signal::new(stretched, values)
}

/// Resamples a field row-wise on the stretched time grid.
pub fn time_reparametrize_field(field: &NdfField, rate: &Signal) -> Result<NdfField> {
    let grid = *field.grid();
    if !rate.on_grid(&grid) {
        return Err(Error::Shape("growth rate is not sampled on the field grid".into()));
    }
    let (cumulative, stretched) = stretched_times(rate)?;
    let new_grid = Grid::new(grid.x_min, grid.x_max, grid.n_x, grid.t0, stretched[grid.n_t - 1], grid.n_t)?;
    let dt = grid.dt();
    let mut values = Vec::with_capacity(grid.n_t * grid.n_x);
    for &s in &stretched {
        let t = cumulative.inverse(s - grid.t0)?;
        let pos = ((t - grid.t0) / dt).clamp(0.0, (grid.n_t - 1) as f64);
        let k = (pos.floor() as usize).min(grid.n_t - 2);
        let w = pos - k as f64;
        let (a, b) = (field.row(k), field.row(k + 1));
        if w.abs() < 1e-12 {
            values.extend_from_slice(a);
        } else if (1.0 - w).abs() < 1e-12 {
            values.extend_from_slice(b);
        } else {
            values.extend(a.iter().zip(b).map(|(p, q)| p * (1.0 - w) + q * w));
        }
    }
    NdfField::new(new_grid, values)
}

/// Knobs of the moment-matched witness pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WitnessOptions {
    /// Constant level added on the support window.
    pub baseline: f64,
    /// Sup-norm distance between the two profiles.
    pub separation: f64,
    /// Size window `[lo, hi]` holding both profiles; defaults to the interior.
    pub support: Option<(f64, f64)>,
    pub nonnegative: bool,
}

impl Default for WitnessOptions {
    fn default() -> Self {
        WitnessOptions { baseline: 1.0, separation: 0.5, support: None, nonnegative: true }
    }
}

/// Two distinct profiles with identical rectangle-rule moments `m_0..m_3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// `dx x_j^r` rows for the four cells starting at `start`.
fn moment_block(grid: &Grid, start: usize) -> Matrix4<f64> {
    let dx = grid.dx();
    Matrix4::from_fn(|r, c| dx * grid.x(start + c).powi(r as i32))
}

fn solve_block(block: &Matrix4<f64>, rhs: &Vector4<f64>) -> Result<Vector4<f64>> {
    let lu = block.full_piv_lu();
    let mut sol = lu.solve(rhs).ok_or_else(|| Error::Construction("moment stencil is singular".into()))?;
    // one refinement step against the cancellation in the Vandermonde rows
    let correction =
        lu.solve(&(rhs - block * sol)).ok_or_else(|| Error::Construction("moment stencil is singular".into()))?;
    sol += correction;
    Ok(sol)
}

/// Rectangle-rule moments `m_0..m_3` of a profile.
pub fn discrete_moments(profile: &[f64], grid: &Grid) -> [f64; 4] {
    let dx = grid.dx();
    let mut m = [0.0; 4];
    for (j, &v) in profile.iter().enumerate() {
        let x = grid.x(j);
        for (r, slot) in m.iter_mut().enumerate() {
            *slot += dx * v * x.powi(r as i32);
        }
    }
    m
}

/// Builds two profiles that share the moments `m` but differ by `separation`
/// in sup-norm.
///
/// The first profile is the baseline on the support window plus a cubic that
/// absorbs the moment mismatch. The second adds a kernel element of the
/// moment map supported on disjoint four-cell stencils at one and two thirds
/// of the window.
pub fn nonobservability_witness(m: [f64; 4], grid: &Grid, options: &WitnessOptions) -> Result<Witness> {
    grid.validate()?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("target moments must be finite".into()));
    }
    if !(options.baseline >= 0.0 && options.separation > 0.0) {
        return Err(Error::Domain("witness baseline must be >= 0 and separation > 0".into()));
    }
    let n = grid.n_x;
    let (lo, hi) = match options.support {
        None => (1, n.saturating_sub(2)),
        Some((a, b)) => {
            let dx = grid.dx();
            let lo = (((a - grid.x_min) / dx).ceil().max(1.0)) as usize;
            let hi = (((b - grid.x_min) / dx).floor() as usize).min(n.saturating_sub(2));
            (lo, hi)
        }
    };
    if hi < lo || hi - lo + 1 < 8 {
        return Err(Error::Domain("the support window must hold at least 8 interior cells".into()));
    }
    let cells = hi - lo + 1;
    let first_start = (lo + cells / 3).saturating_sub(2).max(lo);
    let second_start = (lo + 2 * cells / 3).saturating_sub(2).max(first_start + 4).min(hi - 3);

    let mut first = vec![0.0; n];
    for v in &mut first[lo..=hi] {
        *v = options.baseline;
    }
    // cubic correction over the window carries the moment mismatch
    let base = discrete_moments(&first, grid);
    let (mid, half) = (0.5 * (grid.x(lo) + grid.x(hi)), 0.5 * (grid.x(hi) - grid.x(lo)));
    let basis = |j: usize, c: usize| ((grid.x(j) - mid) / half).powi(c as i32);
    let dx = grid.dx();
    let gram = Matrix4::from_fn(|r, c| (lo..=hi).map(|j| dx * grid.x(j).powi(r as i32) * basis(j, c)).sum::<f64>());
    let rhs = Vector4::from_fn(|r, _| m[r] - base[r]);
    let beta = solve_block(&gram, &rhs)?;
    for (j, v) in first.iter_mut().enumerate().take(hi + 1).skip(lo) {
        *v += (0..4).map(|c| beta[c] * basis(j, c)).sum::<f64>();
    }
    let v1 = moment_block(grid, first_start);
    let v2 = moment_block(grid, second_start);

    // kernel element: ones on the first stencil, balanced on the second
    let ones = Vector4::repeat(1.0);
    let balance = solve_block(&v2, &(v1 * ones))?;
    let mut direction = vec![0.0; n];
    for c in 0..4 {
        direction[first_start + c] = 1.0;
        direction[second_start + c] = -balance[c];
    }
    let scale = direction.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let second: Vec<f64> = first.iter().zip(&direction).map(|(p, d)| p + options.separation * d / scale).collect();

    if options.nonnegative {
        let worst = first.iter().chain(&second).fold(f64::INFINITY, |a, &v| a.min(v));
        if worst < 0.0 {
            return Err(Error::Construction(format!(
                "profiles dip to {worst:.3e}; increase the baseline (currently {})",
                options.baseline
            )));
        }
    }
    Ok(Witness { first, second })
}

/// Relative sup-norm residual of the least-squares cubic fit of `y` in time.
pub fn cubic_output_check(y: &Signal) -> Result<f64> {
    let n = y.len();
    if n < 5 {
        return Err(Error::Domain(format!("cubic check needs at least 5 samples, got {n}")));
    }
    let (a, b) = (y.start(), y.end());
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let design = DMatrix::from_fn(n, 4, |i, c| ((y.times()[i] - mid) / half).powi(c as i32));
    let rhs = DVector::from_column_slice(y.values());
    let coeffs = design.clone().svd(true, true).solve(&rhs, 1e-14).map_err(|e| Error::Domain(e.to_string()))?;
    let residual = (design * coeffs - rhs).amax();
    let scale = y.max_abs();
    Ok(if scale == 0.0 { residual } else { residual / scale })
}

/// Distribution of the additive measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// Uniform with the same standard deviation as the Gaussian option.
    Uniform,
}

/// Adds zero-mean noise of standard deviation `alpha * max |y|`, drawn from a
/// ChaCha8 stream seeded with `seed`.
pub fn add_noise(y: &Signal, alpha: f64, seed: u64, kind: NoiseKind) -> Result<Signal> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Domain(format!("noise level must be >= 0, got {alpha}")));
    }
    let sd = alpha * y.max_abs();
    if sd == 0.0 {
        return Ok(y.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = match kind {
        NoiseKind::Gaussian => {
            let dist = Normal::new(0.0, sd).map_err(|e| Error::Domain(e.to_string()))?;
            (0..y.len()).map(|_| dist.sample(&mut rng)).collect()
        }
        NoiseKind::Uniform => {
            let half = sd * 3f64.sqrt();
            let dist = Uniform::new_inclusive(-half, half);
            (0..y.len()).map(|_| dist.sample(&mut rng)).collect()
        }
    };
    Signal::new(y.times().to_vec(), y.values().iter().zip(noise).map(|(v, e)| v + e).collect())
}

/// Least-squares fit of `log(error) = intercept - rate * t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits an exponential decay rate on `window`, dropping the first
/// `skip_fraction` of the window.
pub fn fit_rate(error: &Signal, window: (f64, f64), skip_fraction: f64) -> Result<RateFit> {
    let (a, b) = window;
    if !(b > a) || !(0.0..1.0).contains(&skip_fraction) {
        return Err(Error::Domain(format!("invalid fitting window [{a}, {b}] or skip fraction {skip_fraction}")));
    }
    let start = a + skip_fraction * (b - a);
    let tol = 1e-12 * (b - a);
    let points: Vec<(f64, f64)> = error
        .times()
        .iter()
        .zip(error.values())
        .filter(|(t, _)| **t >= start - tol && **t <= b + tol)
        .map(|(&t, &e)| (t, e))
        .collect();
    if points.len() < 2 {
        return Err(Error::Domain(format!("fitting window holds {} samples, need at least 2", points.len())));
    }
    if let Some((t, e)) = points.iter().find(|(_, e)| !(*e > 0.0)) {
        return Err(Error::Domain(format!("error is {e} at t = {t}; restrict the window to before the noise floor")));
    }
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_l = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(t, e) in &points {
        let (dt, dl) = (t - mean_t, e.ln() - mean_l);
        sxy += dt * dl;
        sxx += dt * dt;
        syy += dl * dl;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(RateFit { rate: -slope, intercept: mean_l - slope * mean_t, r_squared })
}

/// Denominator used when turning an observer gap into a relative error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `|T(t) - z(t)| / |T(t)|`.
    #[default]
    Pointwise,
    /// `|T(t) - z(t)| / max_s |T(s)|`.
    ByMax,
}

pub fn relative_gap(functional: &[f64], observer: &[f64], normalization: Normalization) -> Result<Vec<f64>> {
    if functional.len() != observer.len() {
        return Err(Error::Shape("functional and observer lengths differ".into()));
    }
    let peak = functional.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(functional
        .iter()
        .zip(observer)
        .map(|(t, z)| {
            let denom = match normalization {
                Normalization::Pointwise => t.abs(),
                Normalization::ByMax => peak,
            };
            (t - z).abs() / denom
        })
        .collect())
}

/// `|a - b|_2 / |b|_2`.
pub fn relative_l2(estimate: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

/// Index of the largest sample.
pub fn peak_index(values: &[f64]) -> usize {
    values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i)
}
