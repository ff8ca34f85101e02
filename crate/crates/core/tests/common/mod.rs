//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use csd_observer::grid::{Grid, Signal};
use csd_observer::process::{output_signal, reference_scenario, simulate, NdfField, Scenario};
use nalgebra::{DMatrix, DVector};

/// First-order upwind integration of `psi_t + G psi_x = 0`, with the speed
/// averaged over each step. Needs `G dt <= dx`.
pub fn upwind(grid: &Grid, psi0: &[f64], u: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64) -> Vec<Vec<f64>> {
    let (dx, dt) = (grid.dx(), grid.dt());
    let mut rows = vec![psi0.to_vec()];
    for k in 0..grid.n_t - 1 {
        let c = 0.5 * (g(grid.t(k)) + g(grid.t(k + 1))) * dt / dx;
        assert!(c <= 1.0 + 1e-12, "upwind oracle is unstable at CFL {c}");
        let prev = &rows[k];
        let mut next = vec![0.0; grid.n_x];
        next[0] = u(grid.t(k + 1));
        for j in 1..grid.n_x {
            next[j] = prev[j] - c * (prev[j] - prev[j - 1]);
        }
        rows.push(next);
    }
    rows
}

pub fn sup_distance(field: &NdfField, rows: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (k, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((field.at(k, j) - v).abs());
        }
    }
    worst
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2));
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Classical RK4 on the characteristic system `X' = G(s)`, `a' = lambda a + X^3`
/// from `(s0, x0, a = 0)` up to `s1`.
pub fn rk4_characteristic(lambda: f64, x0: f64, s0: f64, s1: f64, g: &dyn Fn(f64) -> f64, steps: usize) -> (f64, f64) {
    let h = (s1 - s0) / steps as f64;
    let f = |s: f64, y: [f64; 2]| [g(s), lambda * y[1] + y[0].powi(3)];
    let mut y = [x0, 0.0];
    let mut s = s0;
    for _ in 0..steps {
        let k1 = f(s, y);
        let k2 = f(s + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
        let k3 = f(s + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
        let k4 = f(s + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        for c in 0..2 {
            y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        s += h;
    }
    (y[0], y[1])
}

fn objective_gradient(a: &DMatrix<f64>, z: &DVector<f64>, delta: f64, x: &DVector<f64>) -> DVector<f64> {
    (a.transpose() * (a * x - z) + x * delta) * 2.0
}

/// Plain gradient descent with step `1 / L` on `|A x - z|^2 + delta |x|^2`.
pub fn gradient_descent_tikhonov(a: &DMatrix<f64>, z: &[f64], delta: f64, iterations: usize) -> Vec<f64> {
    let z = DVector::from_column_slice(z);
    let lipschitz = 2.0 * (a.transpose() * a).norm() + 2.0 * delta;
    let mut x = DVector::zeros(a.ncols());
    for _ in 0..iterations {
        let g = objective_gradient(a, &z, delta, &x);
        x -= g / lipschitz;
    }
    x.as_slice().to_vec()
}

/// Projected gradient descent onto `x >= 0`.
pub fn projected_gradient_tikhonov(a: &DMatrix<f64>, z: &[f64], delta: f64, iterations: usize) -> Vec<f64> {
    let z = DVector::from_column_slice(z);
    let lipschitz = 2.0 * (a.transpose() * a).norm() + 2.0 * delta;
    let mut x = DVector::zeros(a.ncols());
    for _ in 0..iterations {
        let g = objective_gradient(a, &z, delta, &x);
        x -= g / lipschitz;
        x.apply(|v| *v = v.max(0.0));
    }
    x.as_slice().to_vec()
}

/// Deterministic pseudo-random matrix entries in `[-1, 1]`.
pub fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    DMatrix::from_fn(rows, cols, |_, _| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// Reference batch on the given grid, its simulated field and output.
pub fn reference_run(grid: Grid) -> (Scenario, NdfField, Signal) {
    let scenario = reference_scenario(grid).unwrap();
    let field = simulate(&scenario).unwrap();
    let y = output_signal(&field).unwrap();
    (scenario, field, y)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}
