//! Kernel weights `a_lambda(t, x)` solving
//!
//! ```text
//! d_t a + G(t) d_x a = lambda a + x^3,   a(t0, .) = 0,   a(., x_min) = 0
//! ```
//!
//! Each grid node is traced back along its characteristic `X' = G` to the
//! initial line or the inflow boundary, where `a` vanishes. Between time nodes
//! the growth rate is linear, so `X` is quadratic in time and the source
//! integral `int e^{lambda (h - s)} X(s)^3 ds` is a polynomial times an
//! exponential. It is integrated in closed form with the phi-functions
//! `phi_n(z) = sum_k z^k / (k + n)!`, and segments are chained with the
//! integrating-factor update `a <- e^{lambda h} a + source`. The chained sums
//! are shared between nodes, so one kernel costs `O(n_t n_x)`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::LambdaBank;
use crate::error::{Error, Result};
use crate::grid::{Grid, Signal};
use crate::process::{CumulativeGrowth, NdfField};

const MAX_PHI: usize = 8;

/// `phi_1(z) ..= phi_{MAX_PHI}(z)` (index 0 holds `phi_0 = e^z`).
fn phi_functions(z: f64) -> [f64; MAX_PHI + 1] {
    let mut phi = [0.0; MAX_PHI + 1];
    phi[0] = z.exp();
    if z.abs() <= 5.0 {
        // power series for the last one, then the downward recurrence
        // phi_{n-1} = z phi_n + 1 / (n - 1)!, which is stable for moderate |z|
        let mut term = 1.0 / factorial(MAX_PHI);
        let mut sum = term;
        let mut k = 1;
        while term.abs() > 1e-18 * sum.abs() && k < 200 {
            term *= z / (k + MAX_PHI) as f64;
            sum += term;
            k += 1;
        }
        phi[MAX_PHI] = sum;
        for n in (2..=MAX_PHI).rev() {
            phi[n - 1] = z * phi[n] + 1.0 / factorial(n - 1);
        }
    } else {
        for n in 1..=MAX_PHI {
            phi[n] = (phi[n - 1] - 1.0 / factorial(n - 1)) / z;
        }
    }
    phi
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

fn poly_mul<const A: usize, const B: usize, const C: usize>(a: &[f64; A], b: &[f64; B]) -> [f64; C] {
    let mut out = [0.0; C];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// `int_0^len e^{lambda (len - s)} q(s) ds` for the polynomial `q` (ascending
/// coefficients).
#[cfg(test)]
fn exp_poly_integral(lambda: f64, len: f64, q: &[f64]) -> f64 {
    exp_poly_integral_with(&phi_functions(lambda * len), len, q)
}

fn exp_poly_integral_with(phi: &[f64; MAX_PHI + 1], len: f64, q: &[f64]) -> f64 {
    let mut pow = len;
    let mut fact = 1.0;
    let mut total = 0.0;
    for (d, &c) in q.iter().enumerate() {
        if d > 0 {
            fact *= d as f64;
        }
        total += c * pow * fact * phi[d + 1];
        pow *= len;
    }
    total
}

/// Source integrals over one stretch of characteristic of length `len`, on
/// which `X(s) = X_start + rate s + curvature s^2 / 2`. `moments[m]` is
/// `int e^{lambda (len - s)} (X - X_start)^m ds`, so the stretch contributes
/// `sum_m C(3, m) X_start^{3 - m} moments[m]`.
#[derive(Debug, Clone, Copy)]
struct Stretch {
    moments: [f64; 4],
}

impl Stretch {
    fn new(lambda: f64, len: f64, rate: f64, curvature: f64) -> Self {
        let p = [0.0, rate, 0.5 * curvature];
        let p2: [f64; 5] = poly_mul(&p, &p);
        let p3: [f64; 7] = poly_mul(&p2, &p);
        let phi = phi_functions(lambda * len);
        Stretch {
            moments: [
                exp_poly_integral_with(&phi, len, &[1.0]),
                exp_poly_integral_with(&phi, len, &p),
                exp_poly_integral_with(&phi, len, &p2),
                exp_poly_integral_with(&phi, len, &p3),
            ],
        }
    }

    fn source(&self, x_start: f64) -> f64 {
        let m = &self.moments;
        ((m[0] * x_start + 3.0 * m[1]) * x_start + 3.0 * m[2]) * x_start + m[3]
    }
}

fn check_rate(rate: &Signal, grid: &Grid) -> Result<()> {
    if !rate.on_grid(grid) {
        return Err(Error::InvalidScenario("growth rate must be sampled on the time grid".into()));
    }
    if rate.values().iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidScenario("growth rate must be strictly positive".into()));
    }
    Ok(())
}

/// Kernel weights for one `lambda`, stored row by row in time.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelField {
    pub lambda: f64,
    grid: Grid,
    values: Vec<f64>,
}

impl KernelField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.grid.n_x + j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.grid.n_x;
        &self.values[k * n..(k + 1) * n]
    }
}

/// Solves the kernel equation for one `lambda < 0`.
pub fn solve_kernel(lambda: f64, rate: &Signal, grid: &Grid) -> Result<KernelField> {
    if !(lambda < 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("kernel parameter lambda must be negative, got {lambda}")));
    }
    grid.validate()?;
    check_rate(rate, grid)?;
    let values = kernel_values(lambda, rate, grid)?;
    Ok(KernelField { lambda, grid: *grid, values })
}

fn kernel_values(lambda: f64, rate: &Signal, grid: &Grid) -> Result<Vec<f64>> {
    let cum = CumulativeGrowth::new(rate);
    let table = cum.table();
    let times = rate.times();
    let g = rate.values();
    let n_t = grid.n_t;
    let n_x = grid.n_x;

    // Writing the start of segment i as x' + table[i] with x' = x - table[k],
    // its source is a cubic in x'. The chained update for a node is then
    // sum_m x'^m S_m, where S_m are exponentially weighted sums of the
    // Taylor coefficients; prefix[k] holds those sums over segments 0..k.
    let mut prefix = vec![[0.0; 4]; n_t];
    for i in 0..n_t - 1 {
        let h = times[i + 1] - times[i];
        let curvature = (g[i + 1] - g[i]) / h;
        let m = Stretch::new(lambda, h, g[i], curvature).moments;
        let tau = table[i];
        let coeffs = [
            ((m[0] * tau + 3.0 * m[1]) * tau + 3.0 * m[2]) * tau + m[3],
            (3.0 * m[0] * tau + 6.0 * m[1]) * tau + 3.0 * m[2],
            3.0 * (m[0] * tau + m[1]),
            m[0],
        ];
        let decay = (lambda * h).exp();
        for c in 0..4 {
            prefix[i + 1][c] = decay * prefix[i][c] + coeffs[c];
        }
    }

    let mut values = vec![0.0; n_t * n_x];
    for k in 1..n_t {
        let full = prefix[k];
        for j in 1..n_x {
            let x = grid.x(j);
            let offset = x - grid.x_min;
            let shifted = x - table[k];
            values[k * n_x + j] = if offset >= table[k] {
                horner(&full, shifted)
            } else {
                // foot on the inflow boundary x = x_min
                let foot = cum.inverse(table[k] - offset)?;
                if foot >= times[k] {
                    continue;
                }
                let i = (times.partition_point(|&s| s <= foot) - 1).min(k - 1);
                let h = times[i + 1] - times[i];
                let curvature = (g[i + 1] - g[i]) / h;
                let rate_at_foot = g[i] + curvature * (foot - times[i]);
                let partial = Stretch::new(lambda, times[i + 1] - foot, rate_at_foot, curvature);
                let carry = (lambda * (times[k] - times[i + 1])).exp();
                let head = prefix[i + 1];
                let tail: [f64; 4] = std::array::from_fn(|c| full[c] - carry * head[c]);
                carry * partial.source(grid.x_min) + horner(&tail, shifted)
            };
        }
    }
    Ok(values)
}

fn horner(c: &[f64; 4], x: f64) -> f64 {
    ((c[3] * x + c[2]) * x + c[1]) * x + c[0]
}

/// Kernel weights for every `lambda` of a bank.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    grid: Grid,
    lambdas: LambdaBank,
    rate: Signal,
    values: Vec<f64>,
}

impl KernelBank {
    /// Solves every kernel of the bank; kernels are computed in parallel.
    pub fn compute(lambdas: &LambdaBank, rate: &Signal, grid: &Grid) -> Result<Self> {
        grid.validate()?;
        check_rate(rate, grid)?;
        let per_lambda = lambdas
            .values()
            .par_iter()
            .map(|&l| solve_kernel(l, rate, grid).map(|f| f.values))
            .collect::<Result<Vec<_>>>()?;
        Ok(KernelBank { grid: *grid, lambdas: lambdas.clone(), rate: rate.clone(), values: per_lambda.concat() })
    }

    pub(crate) fn from_parts(grid: Grid, lambdas: LambdaBank, rate: Signal, values: Vec<f64>) -> Result<Self> {
        if values.len() != lambdas.len() * grid.n_t * grid.n_x {
            return Err(Error::Shape("kernel tensor size mismatch".into()));
        }
        Ok(KernelBank { grid, lambdas, rate, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn lambdas(&self) -> &LambdaBank {
        &self.lambdas
    }

    /// Growth rate the kernels were solved with.
    pub fn rate(&self) -> &Signal {
        &self.rate
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn at(&self, i: usize, k: usize, j: usize) -> f64 {
        let (n_t, n_x) = (self.grid.n_t, self.grid.n_x);
        self.values[(i * n_t + k) * n_x + j]
    }

    /// `a_{lambda_i}(t_k, .)`.
    pub fn row(&self, i: usize, k: usize) -> &[f64] {
        let (n_t, n_x) = (self.grid.n_t, self.grid.n_x);
        let start = (i * n_t + k) * n_x;
        &self.values[start..start + n_x]
    }

    pub fn kernel(&self, i: usize) -> KernelField {
        let size = self.grid.n_t * self.grid.n_x;
        KernelField {
            lambda: self.lambdas.values()[i],
            grid: self.grid,
            values: self.values[i * size..(i + 1) * size].to_vec(),
        }
    }
}

/// `T_lambda(psi)(t_k) ~ dx * sum_j a(t_k, x_j) psi(t_k, x_j)`.
pub fn functional_t(kernel: &KernelField, field: &NdfField, k: usize) -> Result<f64> {
    if kernel.grid != *field.grid() {
        return Err(Error::Shape("kernel and field live on different grids".into()));
    }
    if k >= kernel.grid.n_t {
        return Err(Error::Domain(format!("time index {k} out of range")));
    }
    Ok(kernel.grid.dx() * dot(kernel.row(k), field.row(k)))
}

/// Matrix `A[i][j] = dx * a_{lambda_i}(t_k, x_j)`.
pub fn observation_matrix(kernels: &KernelBank, k: usize) -> Result<DMatrix<f64>> {
    if k >= kernels.grid.n_t {
        return Err(Error::Domain(format!("time index {k} out of range")));
    }
    let dx = kernels.grid.dx();
    let (p, n) = (kernels.len(), kernels.grid.n_x);
    Ok(DMatrix::from_fn(p, n, |i, j| dx * kernels.at(i, k, j)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
