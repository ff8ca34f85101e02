//! Tikhonov-regularized inversion of the observer bank.
//!
//! At each time node the estimate solves
//!
//! ```text
//! minimize |A psi - z|^2 + delta |psi|^2
//! ```
//!
//! where `A[i][j] = dx a_{lambda_i}(t_k, x_j)` and `z` is the bank state.
//! The unconstrained problem is solved through the normal equations
//! `(A^T A + delta I) psi = A^T z` with a Cholesky factorization. The
//! nonnegative variant restricts to `psi >= 0` and runs a warm-started
//! active-set method on the same quadratic.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{lerp_uniform, Grid};
use crate::observer::{observation_matrix, KernelBank, ObserverBank};
use crate::process::NdfField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    #[default]
    ClosedForm,
    Nonnegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TikhonovConfig {
    pub delta: f64,
    pub mode: SolveMode,
    pub max_iter: usize,
    /// Projected-gradient tolerance, relative to `max(1, |A^T z|_inf)`.
    pub tol: f64,
    /// Penalize `dx |psi|^2` instead of the plain sample norm.
    pub weighted: bool,
}

impl Default for TikhonovConfig {
    fn default() -> Self {
        TikhonovConfig { delta: 0.1, mode: SolveMode::ClosedForm, max_iter: 10_000, tol: 1e-10, weighted: false }
    }
}

impl TikhonovConfig {
    pub fn with_delta(delta: f64) -> Self {
        TikhonovConfig { delta, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Domain(format!("regularization weight must be >= 0, got {}", self.delta)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Domain(format!("tolerance must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Domain("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Minimizer with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TikhonovSolution {
    pub psi: Vec<f64>,
    /// `|A psi - z|`.
    pub residual: f64,
    /// `|psi|`.
    pub norm: f64,
    pub iterations: usize,
}

/// `|A psi - z|^2 + delta |psi|^2`.
pub fn tikhonov_objective(a: &DMatrix<f64>, z: &[f64], delta: f64, psi: &[f64]) -> f64 {
    let r = a * DVector::from_column_slice(psi) - DVector::from_column_slice(z);
    r.norm_squared() + delta * psi.iter().map(|v| v * v).sum::<f64>()
}

/// Solves the regularized least-squares problem for one time node.
///
/// `init` only seeds the nonnegative mode; the closed-form answer does not
/// depend on it.
pub fn tikhonov_solve(a: &DMatrix<f64>, z: &[f64], config: &TikhonovConfig, init: &[f64]) -> Result<TikhonovSolution> {
    config.validate()?;
    let (p, n) = a.shape();
    if p == 0 || n == 0 {
        return Err(Error::Shape("observation matrix is empty".into()));
    }
    if z.len() != p || init.len() != n {
        return Err(Error::Shape(format!(
            "matrix is {p} x {n}, data has {} entries, initial guess {}",
            z.len(),
            init.len()
        )));
    }
    let mut h = a.transpose() * a;
    for j in 0..n {
        h[(j, j)] += config.delta;
    }
    let b = a.transpose() * DVector::from_column_slice(z);
    let (psi, iterations) = match config.mode {
        SolveMode::ClosedForm => (solve_spd(&h, &b, config.delta)?, 1),
        SolveMode::Nonnegative => nonnegative_active_set(&h, &b, config, init)?,
    };
    let residual = (a * &psi - DVector::from_column_slice(z)).norm();
    Ok(TikhonovSolution { norm: psi.norm(), psi: psi.as_slice().to_vec(), residual, iterations })
}

fn solve_spd(h: &DMatrix<f64>, b: &DVector<f64>, delta: f64) -> Result<DVector<f64>> {
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    if delta == 0.0 {
        let rank_deficient = match h.clone().cholesky() {
            None => true,
            Some(c) => {
                let l = c.l();
                let min = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
                min <= 1e-12 * scale
            }
        };
        if rank_deficient {
            return Err(Error::IllPosed("A^T A is singular, the unregularized minimizer is not unique".into()));
        }
    }
    match h.clone().cholesky() {
        Some(c) => Ok(c.solve(b)),
        None => Err(Error::IllPosed("normal matrix is not positive definite".into())),
    }
}

/// Primal active-set method (Lawson-Hanson generalized to an SPD Hessian) for
/// `min 1/2 psi^T H psi - b^T psi` subject to `psi >= 0`, started from
/// `max(init, 0)`.
fn nonnegative_active_set(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    config: &TikhonovConfig,
    init: &[f64],
) -> Result<(DVector<f64>, usize)> {
    let n = b.len();
    let threshold = config.tol * b.amax().max(1.0);
    let mut x = DVector::from_iterator(n, init.iter().map(|v| v.max(0.0)));
    let mut free: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let grad = h * &x - b;
        let pg = projected_gradient_norm(&x, &grad);
        if iterations > config.max_iter {
            return Err(Error::Convergence {
                iterations: config.max_iter,
                pg_norm: pg,
                iterate: x.as_slice().to_vec(),
            });
        }
        let subproblem = restricted_minimizer(h, b, &free)?;
        let feasible = (0..n).all(|j| !free[j] || subproblem[j] > 0.0);
        if feasible {
            x = subproblem;
            let grad = h * &x - b;
            let pg = projected_gradient_norm(&x, &grad);
            if pg <= threshold {
                return Ok((x, iterations));
            }
            // release the bound with the steepest descent direction
            let entering = (0..n).filter(|&j| !free[j]).min_by(|&i, &j| grad[i].total_cmp(&grad[j]));
            match entering {
                Some(j) if grad[j] < 0.0 => free[j] = true,
                _ => return Ok((x, iterations)),
            }
        } else {
            // move toward the subproblem minimizer until a bound is hit
            let mut alpha = 1.0_f64;
            for j in 0..n {
                if free[j] && subproblem[j] <= 0.0 {
                    let denom = x[j] - subproblem[j];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            x += (&subproblem - &x) * alpha;
            for j in 0..n {
                if free[j] && (x[j] <= 0.0 || (subproblem[j] <= 0.0 && x[j] <= 1e-300)) {
                    x[j] = 0.0;
                    free[j] = false;
                }
            }
            // the blocking index always leaves the free set
            for j in 0..n {
                if free[j] && subproblem[j] <= 0.0 {
                    let denom = x[j] - subproblem[j];
                    if denom > 0.0 && (x[j] / denom) <= 1e-15 {
                        x[j] = 0.0;
                        free[j] = false;
                    }
                }
            }
        }
    }
}

fn restricted_minimizer(h: &DMatrix<f64>, b: &DVector<f64>, free: &[bool]) -> Result<DVector<f64>> {
    let idx: Vec<usize> = (0..free.len()).filter(|&j| free[j]).collect();
    let mut out = DVector::zeros(free.len());
    if idx.is_empty() {
        return Ok(out);
    }
    let sub_h = DMatrix::from_fn(idx.len(), idx.len(), |r, c| h[(idx[r], idx[c])]);
    let sub_b = DVector::from_fn(idx.len(), |r, _| b[idx[r]]);
    let sol =
        sub_h.cholesky().ok_or_else(|| Error::IllPosed("restricted normal matrix is singular".into()))?.solve(&sub_b);
    for (r, &j) in idx.iter().enumerate() {
        out[j] = sol[r];
    }
    Ok(out)
}

/// Infinity norm of the gradient projected on the tangent cone of `psi >= 0`.
pub fn projected_gradient_norm(x: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    x.iter().zip(grad.iter()).map(|(&xj, &gj)| if xj > 0.0 { gj.abs() } else { (-gj).max(0.0) }).fold(0.0, f64::max)
}

/// Transports the previous estimate to the right by `growth * dt`.
///
/// Cells uncovered at the inflow edge take the previous value at `x_min`.
pub fn warm_start_shift(prev: &[f64], growth: f64, dt: f64, grid: &Grid) -> Result<Vec<f64>> {
    if prev.len() != grid.n_x {
        return Err(Error::Shape(format!("previous estimate has {} samples, grid has {}", prev.len(), grid.n_x)));
    }
    let shift = growth * dt;
    let dx = grid.dx();
    Ok((0..grid.n_x).map(|j| lerp_uniform(prev, grid.x_min, dx, grid.x(j) - shift, prev[0])).collect())
}

/// Reconstructed NDF with per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateField {
    field: NdfField,
    pub residuals: Vec<f64>,
    pub norms: Vec<f64>,
    pub iterations: Vec<usize>,
    pub wall_time_ms: Vec<f64>,
    /// `false` where the observation matrix vanishes (the first node).
    pub identifiable: Vec<bool>,
}

impl EstimateField {
    /// Wraps a stored estimate; per-step diagnostics are unknown (`NaN`).
    pub fn from_field(field: NdfField) -> Self {
        let n_t = field.grid().n_t;
        EstimateField {
            residuals: vec![f64::NAN; n_t],
            norms: vec![f64::NAN; n_t],
            iterations: vec![0; n_t],
            wall_time_ms: vec![0.0; n_t],
            identifiable: (0..n_t).map(|k| k > 0).collect(),
            field,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.field.grid()
    }

    pub fn field(&self) -> &NdfField {
        &self.field
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.field.row(k)
    }
}

/// Runs the inversion at every time node with continuation warm starts.
pub fn reconstruct(kernels: &KernelBank, observers: &ObserverBank, config: &TikhonovConfig) -> Result<EstimateField> {
    config.validate()?;
    let grid = *kernels.grid();
    if kernels.lambdas() != observers.lambdas() {
        return Err(Error::Shape("kernel bank and observer bank use different gains".into()));
    }
    let times_match = observers.times().len() == grid.n_t
        && observers.times().iter().enumerate().all(|(k, &t)| (t - grid.t(k)).abs() <= 1e-9 * grid.dt());
    if !times_match {
        return Err(Error::Shape("observer trajectories are not sampled on the kernel time grid".into()));
    }
    let mut effective = *config;
    if config.weighted {
        effective.delta *= grid.dx();
    }
    let rate = kernels.rate().values();
    let dt = grid.dt();
    let (n_t, n_x) = (grid.n_t, grid.n_x);
    let mut values = Vec::with_capacity(n_t * n_x);
    let mut out = EstimateField {
        field: NdfField::zeros(grid),
        residuals: Vec::with_capacity(n_t),
        norms: Vec::with_capacity(n_t),
        iterations: Vec::with_capacity(n_t),
        wall_time_ms: Vec::with_capacity(n_t),
        identifiable: Vec::with_capacity(n_t),
    };
    let mut prev = vec![0.0; n_x];
    for k in 0..n_t {
        let started = Instant::now();
        let z = observers.snapshot(k);
        let a = observation_matrix(kernels, k)?;
        if a.iter().all(|&v| v == 0.0) {
            prev = vec![0.0; n_x];
            out.residuals.push(z.iter().map(|v| v * v).sum::<f64>().sqrt());
            out.norms.push(0.0);
            out.iterations.push(0);
            out.identifiable.push(false);
        } else {
            let init = if k == 0 { vec![0.0; n_x] } else { warm_start_shift(&prev, rate[k - 1], dt, &grid)? };
            let sol = tikhonov_solve(&a, &z, &effective, &init)?;
            out.residuals.push(sol.residual);
            out.norms.push(sol.norm);
            out.iterations.push(sol.iterations);
            out.identifiable.push(true);
            prev = sol.psi;
        }
        values.extend_from_slice(&prev);
        out.wall_time_ms.push(started.elapsed().as_secs_f64() * 1e3);
    }
    out.field = NdfField::new(grid, values)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_normal_equation() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let cfg = TikhonovConfig::with_delta(1.0);
        let s = tikhonov_solve(&a, &[1.0], &cfg, &[0.0]).unwrap();
        assert!((s.psi[0] - 0.5).abs() < 1e-15);
        assert!((s.residual - 0.5).abs() < 1e-15);
        assert!((s.norm - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_data_gives_zero() {
        let a = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0);
        for mode in [SolveMode::ClosedForm, SolveMode::Nonnegative] {
            let cfg = TikhonovConfig { mode, ..TikhonovConfig::with_delta(0.3) };
            let s = tikhonov_solve(&a, &[0.0; 3], &cfg, &[1.0; 4]).unwrap();
            assert!(s.psi.iter().all(|&v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn unregularized_rank_deficient_is_ill_posed() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let cfg = TikhonovConfig::with_delta(0.0);
        let r = tikhonov_solve(&a, &[1.0, 2.0], &cfg, &[0.0; 3]);
        assert!(matches!(r, Err(Error::IllPosed(_))));
        // full column rank is fine without regularization
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let s = tikhonov_solve(&b, &[1.0, 2.0, 3.0], &cfg, &[0.0; 2]).unwrap();
        assert!((s.psi[0] - 1.0).abs() < 1e-12 && (s.psi[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nonnegative_mode_clips_negative_direction() {
        // unconstrained minimizer (-1, 2) with delta -> 0; constrained one (0, 2)
        let a = DMatrix::identity(2, 2);
        let cfg = TikhonovConfig { mode: SolveMode::Nonnegative, ..TikhonovConfig::with_delta(1e-12) };
        let s = tikhonov_solve(&a, &[-1.0, 2.0], &cfg, &[5.0, 5.0]).unwrap();
        assert_eq!(s.psi[0], 0.0);
        assert!((s.psi[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn convergence_error_carries_iterate() {
        let a = DMatrix::from_fn(6, 5, |i, j| ((i + 1) as f64).powi(j as i32) * 0.1);
        let cfg = TikhonovConfig { mode: SolveMode::Nonnegative, max_iter: 1, ..TikhonovConfig::with_delta(0.01) };
        let z = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        match tikhonov_solve(&a, &z, &cfg, &[0.0; 5]) {
            Err(Error::Convergence { iterate, .. }) => assert_eq!(iterate.len(), 5),
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config() {
        let a = DMatrix::identity(2, 2);
        let cfg = TikhonovConfig { tol: 0.0, ..Default::default() };
        assert!(tikhonov_solve(&a, &[1.0, 1.0], &cfg, &[0.0; 2]).is_err());
        let cfg = TikhonovConfig::with_delta(-1.0);
        assert!(tikhonov_solve(&a, &[1.0, 1.0], &cfg, &[0.0; 2]).is_err());
        assert!(tikhonov_solve(&a, &[1.0], &Default::default(), &[0.0; 2]).is_err());
    }

    #[test]
    fn shift_examples() {
        let grid = Grid::new(0.0, 1.0, 11, 0.0, 1.0, 11).unwrap();
        let prev: Vec<f64> = (0..11).map(|j| (j as f64).sin() + 2.0).collect();
        assert_eq!(warm_start_shift(&prev, 0.0, 0.1, &grid).unwrap(), prev);

        let one = warm_start_shift(&prev, 1.0, 0.1, &grid).unwrap();
        assert_eq!(one[0], prev[0]);
        for j in 1..11 {
            assert!((one[j] - prev[j - 1]).abs() < 1e-12);
        }

        let ramp: Vec<f64> = grid.xs().iter().map(|&x| 3.0 * x - 1.0).collect();
        let half = warm_start_shift(&ramp, 0.5, 0.1, &grid).unwrap();
        for (j, v) in half.iter().enumerate().skip(1) {
            let expected = 3.0 * (grid.x(j) - 0.05) - 1.0;
            assert!((v - expected).abs() < 1e-12);
        }
        assert_eq!(half[0], ramp[0]);
    }
}
