//! Uniform space-time grids and sampled time signals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index offsets closer than this to an integer are snapped onto the node.
const NODE_SNAP: f64 = 1e-9;

/// Uniform discretization of `[x_min, x_max] x [t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub t0: f64,
    pub t1: f64,
    pub n_t: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_x: usize, t0: f64, t1: f64, n_t: usize) -> Result<Self> {
        let grid = Grid { x_min, x_max, n_x, t0, t1, n_t };
        grid.validate()?;
        Ok(grid)
    }

    /// The 100 x 100 grid on `(0, 10) x (0, 10)` used by the reference experiment.
    pub fn reference() -> Self {
        Grid { x_min: 0.0, x_max: 10.0, n_x: 100, t0: 0.0, t1: 10.0, n_t: 100 }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.x_min, self.x_max, self.t0, self.t1].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Domain("grid bounds must be finite".into()));
        }
        if !(self.x_min >= 0.0 && self.x_max > self.x_min) {
            return Err(Error::Domain(format!(
                "grid requires x_max > x_min >= 0, got [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        if !(self.t0 >= 0.0 && self.t1 > self.t0) {
            return Err(Error::Domain(format!("grid requires t1 > t0 >= 0, got [{}, {}]", self.t0, self.t1)));
        }
        if self.n_x < 2 || self.n_t < 2 {
            return Err(Error::Domain(format!("grid requires n_x >= 2 and n_t >= 2, got {} x {}", self.n_x, self.n_t)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_x - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / (self.n_t - 1) as f64
    }

    /// Size coordinate of node `j`. The last node is exactly `x_max`.
    pub fn x(&self, j: usize) -> f64 {
        if j + 1 == self.n_x {
            self.x_max
        } else {
            self.x_min + j as f64 * self.dx()
        }
    }

    /// Time coordinate of node `k`. The last node is exactly `t1`.
    pub fn t(&self, k: usize) -> f64 {
        if k + 1 == self.n_t {
            self.t1
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| self.x(j)).collect()
    }

    pub fn ts(&self) -> Vec<f64> {
        (0..self.n_t).map(|k| self.t(k)).collect()
    }

    /// Same domain with both step sizes halved.
    pub fn refined(&self) -> Self {
        Grid { n_x: 2 * self.n_x - 1, n_t: 2 * self.n_t - 1, ..*self }
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.t1
    }
}

/// Linear interpolation of samples on the uniform lattice `start + i * step`.
///
/// Positions within `NODE_SNAP` of a node return the node value exactly;
/// positions outside the lattice return `outside`.
pub fn lerp_uniform(values: &[f64], start: f64, step: f64, x: f64, outside: f64) -> f64 {
    let n = values.len();
    let pos = (x - start) / step;
    let nearest = pos.round();
    if (pos - nearest).abs() < NODE_SNAP {
        if nearest < 0.0 || nearest > (n - 1) as f64 {
            return outside;
        }
        return values[nearest as usize];
    }
    if pos < 0.0 || pos > (n - 1) as f64 {
        return outside;
    }
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// A scalar quantity sampled at strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Signal {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Shape(format!("signal has {} times but {} values", times.len(), values.len())));
        }
        if times.is_empty() {
            return Err(Error::Shape("signal is empty".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("signal times must be strictly increasing".into()));
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("signal samples must be finite".into()));
        }
        Ok(Signal { times, values })
    }

    /// Samples `f` at every time node of `grid`.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let times = grid.ts();
        let values = times.iter().map(|&t| f(t)).collect();
        Signal::new(times, values)
    }

    pub fn constant(grid: &Grid, value: f64) -> Result<Self> {
        Signal::from_fn(grid, |_| value)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Linear interpolation; constant extrapolation outside the sampled range.
    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.len();
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return self.values[0];
        }
        if i == n {
            return self.values[n - 1];
        }
        let (t_a, t_b) = (self.times[i - 1], self.times[i]);
        let w = (t - t_a) / (t_b - t_a);
        if w == 0.0 {
            return self.values[i - 1];
        }
        self.values[i - 1] * (1.0 - w) + self.values[i] * w
    }

    /// True when the samples cover `[t0, t1]` of `grid`.
    pub fn covers(&self, grid: &Grid) -> bool {
        let tol = 1e-12 * (grid.t1 - grid.t0).max(1.0);
        self.start() <= grid.t0 + tol && self.end() >= grid.t1 - tol
    }

    /// True when the sample times coincide with the time nodes of `grid`.
    pub fn on_grid(&self, grid: &Grid) -> bool {
        let tol = 1e-9 * grid.dt();
        self.len() == grid.n_t && self.times.iter().enumerate().all(|(k, &t)| (t - grid.t(k)).abs() <= tol)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Signal::new(self.times.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
