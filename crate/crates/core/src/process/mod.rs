//! Batch crystallizer model: size-independent transport of the number
//! density function (NDF) and its third-moment measurement.
//!
//! The NDF `psi(t, x)` solves
//!
//! ```text
//! d_t psi + G(t) d_x psi = 0        on (t0, t1) x (x_min, x_max)
//! psi(t0, x)    = psi0(x)
//! psi(t, x_min) = u(t)               (nucleation inflow)
//! ```
//!
//! With `Gc(t) = int_{t0}^t G`, the solution is `psi0(x - Gc(t))` when
//! `x - x_min >= Gc(t)` and `u(Gc^{-1}(Gc(t) - x + x_min))` otherwise.
//! [`simulate`] evaluates this closed form on every grid node.

mod growth;
mod sensor;

pub use growth::{cumulative_growth, growth_rate, CumulativeGrowth};
pub use sensor::{concentration_from_moment, moment_from_concentration, SensorModel};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{lerp_uniform, Grid, Signal};

/// Growth data: either a measured rate or the supersaturation model inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Growth {
    Direct(Signal),
    Concentration { c_c: Signal, c_star: Signal, k_g: f64 },
}

impl Growth {
    /// Growth rate samples.
    pub fn rate(&self) -> Result<Signal> {
        match self {
            Growth::Direct(g) => Ok(g.clone()),
            Growth::Concentration { c_c, c_star, k_g } => {
                if c_c.times() != c_star.times() {
                    return Err(Error::Shape("C_c and C* must be sampled at the same times".into()));
                }
                let values = c_c
                    .values()
                    .iter()
                    .zip(c_star.values())
                    .map(|(&c, &s)| growth_rate(c, s, *k_g))
                    .collect::<Result<Vec<_>>>()?;
                Signal::new(c_c.times().to_vec(), values)
            }
        }
    }
}

/// Everything needed to simulate one batch.
#[derive(Debug, Clone)]
pub struct Scenario {
    grid: Grid,
    psi0: Vec<f64>,
    u: Signal,
    growth: Growth,
    rate: Signal,
    cumulative: CumulativeGrowth,
    sensor: SensorModel,
    xbar: f64,
}

impl Scenario {
    /// Builds and validates a scenario.
    ///
    /// `psi0` holds one sample per size node. When `xbar` is `None` it is set
    /// to the first node past the last nonzero sample of `psi0`.
    pub fn new(
        grid: Grid,
        psi0: Vec<f64>,
        u: Signal,
        growth: Growth,
        sensor: SensorModel,
        xbar: Option<f64>,
    ) -> Result<Self> {
        grid.validate()?;
        sensor.validate()?;
        if psi0.len() != grid.n_x {
            return Err(Error::Shape(format!("psi0 has {} samples, grid has {} size nodes", psi0.len(), grid.n_x)));
        }
        if psi0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScenario("psi0 samples must be finite".into()));
        }
        if !u.covers(&grid) {
            return Err(Error::InvalidScenario(format!(
                "nucleation signal u covers [{}, {}], grid needs [{}, {}]",
                u.start(),
                u.end(),
                grid.t0,
                grid.t1
            )));
        }
        let rate = growth.rate()?;
        if !rate.on_grid(&grid) {
            return Err(Error::InvalidScenario("growth rate must be sampled on the time grid".into()));
        }
        let mu = rate.values().iter().cloned().fold(f64::INFINITY, f64::min);
        if !(mu > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "growth rate must satisfy G(t) >= mu > 0, minimum sample is {mu}"
            )));
        }
        let u0 = u.at(grid.t0);
        if (u0 - psi0[0]).abs() > 1e-12 * u0.abs().max(psi0[0].abs()).max(1.0) {
            return Err(Error::InvalidScenario(format!(
                "compatibility u(t0) = psi0(x_min) violated: u(t0) = {u0}, psi0(x_min) = {}",
                psi0[0]
            )));
        }
        let xbar = match xbar {
            Some(v) => v,
            None => support_edge(&grid, &psi0),
        };
        if !(xbar >= grid.x_min && xbar < grid.x_max) {
            return Err(Error::InvalidScenario(format!("xbar = {xbar} must lie in [x_min, x_max)")));
        }
        let dx = grid.dx();
        let tail_nonzero = (0..grid.n_x).any(|j| grid.x(j) >= xbar && psi0[j] != 0.0)
            || lerp_uniform(&psi0, grid.x_min, dx, xbar, 0.0) != 0.0;
        if tail_nonzero {
            return Err(Error::InvalidScenario(format!("psi0 must vanish on [xbar, x_max] with xbar = {xbar}")));
        }
        let cumulative = CumulativeGrowth::new(&rate);
        let reach = xbar + cumulative.total();
        if !(reach < grid.x_max) {
            return Err(Error::InvalidScenario(format!(
                "zero-tail hypothesis violated: xbar + int G = {reach} >= x_max = {}",
                grid.x_max
            )));
        }
        Ok(Scenario { grid, psi0, u, growth, rate, cumulative, sensor, xbar })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn psi0(&self) -> &[f64] {
        &self.psi0
    }

    pub fn nucleation(&self) -> &Signal {
        &self.u
    }

    pub fn growth(&self) -> &Growth {
        &self.growth
    }

    /// Growth rate sampled on the time grid.
    pub fn growth_rate(&self) -> &Signal {
        &self.rate
    }

    pub fn cumulative_growth(&self) -> &CumulativeGrowth {
        &self.cumulative
    }

    pub fn sensor(&self) -> &SensorModel {
        &self.sensor
    }

    pub fn xbar(&self) -> f64 {
        self.xbar
    }

    /// Sizes at or beyond this edge stay empty for the whole batch.
    pub fn tail_edge(&self) -> f64 {
        self.xbar + self.cumulative.total()
    }

    fn psi0_at(&self, x: f64) -> f64 {
        lerp_uniform(&self.psi0, self.grid.x_min, self.grid.dx(), x, 0.0)
    }
}

/// First size node past the last nonzero sample.
fn support_edge(grid: &Grid, psi0: &[f64]) -> f64 {
    match psi0.iter().rposition(|&v| v != 0.0) {
        None => grid.x_min,
        Some(j) if j + 1 < grid.n_x => grid.x(j + 1),
        Some(_) => grid.x_max,
    }
}

/// Evaluates the closed-form transport solution at `(t, x)`.
pub fn analytic_solution(scenario: &Scenario, t: f64, x: f64) -> Result<f64> {
    let grid = &scenario.grid;
    let tol = 1e-12 * (grid.x_max - grid.x_min).max(1.0);
    if !(x >= grid.x_min - tol && x <= grid.x_max + tol) {
        return Err(Error::Domain(format!("size {x} outside [{}, {}]", grid.x_min, grid.x_max)));
    }
    let travelled = scenario.cumulative.at(t)?;
    let offset = x - grid.x_min;
    if offset >= travelled {
        Ok(scenario.psi0_at(x - travelled))
    } else {
        let birth = scenario.cumulative.inverse(travelled - offset)?;
        Ok(scenario.u.at(birth))
    }
}

/// Number density samples on a space-time grid, stored row by row in time.
#[derive(Debug, Clone, PartialEq)]
pub struct NdfField {
    grid: Grid,
    values: Vec<f64>,
}

impl NdfField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_t * grid.n_x {
            return Err(Error::Shape(format!(
                "field has {} values, grid needs {} x {}",
                values.len(),
                grid.n_t,
                grid.n_x
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("field values must be finite".into()));
        }
        Ok(NdfField { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        NdfField { values: vec![0.0; grid.n_t * grid.n_x], grid }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.grid.n_x + j]
    }

    /// Size profile at time index `k`.
    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.grid.n_x;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.grid.n_x)
    }

    pub fn max_abs_diff(&self, other: &NdfField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::Shape("fields live on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

/// Fills the grid with the closed-form solution (method of characteristics).
pub fn simulate(scenario: &Scenario) -> Result<NdfField> {
    let grid = scenario.grid;
    let rows = (0..grid.n_t)
        .into_par_iter()
        .map(|k| {
            let t = grid.t(k);
            (0..grid.n_x).map(|j| analytic_solution(scenario, t, grid.x(j))).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    NdfField::new(grid, rows.concat())
}

/// Rectangle-rule third moment `dx * sum_j psi_j x_j^3` at time index `k`.
pub fn third_moment(field: &NdfField, k: usize) -> Result<f64> {
    if k >= field.grid.n_t {
        return Err(Error::Domain(format!("time index {k} out of range 0..{}", field.grid.n_t)));
    }
    Ok(weighted_moment(field, k, 3))
}

/// Rectangle-rule moment of order `order` at time index `k`.
pub(crate) fn weighted_moment(field: &NdfField, k: usize, order: i32) -> f64 {
    let grid = &field.grid;
    let dx = grid.dx();
    field.row(k).iter().enumerate().map(|(j, &v)| v * grid.x(j).powi(order)).sum::<f64>() * dx
}

/// Third-moment output `y(t_k)` on every time node.
pub fn output_signal(field: &NdfField) -> Result<Signal> {
    let grid = field.grid;
    let values = (0..grid.n_t).map(|k| weighted_moment(field, k, 3)).collect();
    Signal::new(grid.ts(), values)
}

/// Nucleation profile used by the reference batch: a Gaussian bump centred at
/// `peak_time`, lowered by its edge value so it vanishes continuously at both
/// ends of `support` and rescaled to reach `amplitude` at the peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussian {
    pub peak_time: f64,
    pub std_dev: f64,
    pub amplitude: f64,
    pub support: (f64, f64),
}

impl Default for TruncatedGaussian {
    fn default() -> Self {
        TruncatedGaussian { peak_time: 3.0, std_dev: 1.0, amplitude: 1.0, support: (0.0, 6.0) }
    }
}

impl TruncatedGaussian {
    pub fn eval(&self, t: f64) -> f64 {
        let (a, b) = self.support;
        if t < a || t > b {
            return 0.0;
        }
        let bell = |s: f64| (-(s - self.peak_time).powi(2) / (2.0 * self.std_dev.powi(2))).exp();
        let floor = bell(a).max(bell(b));
        if floor >= 1.0 {
            return 0.0;
        }
        self.amplitude * ((bell(t) - floor) / (1.0 - floor)).max(0.0)
    }
}

/// Default growth rate of the reference batch, slowly decaying as
/// supersaturation is consumed.
pub fn reference_growth(t: f64) -> f64 {
    0.9 + 0.1 * (-t / 5.0).exp()
}

/// The reference batch: empty seed, truncated-Gaussian nucleation peaking at
/// t = 3 on [0, 6], unit sensor constants, on the given grid.
pub fn reference_scenario(grid: Grid) -> Result<Scenario> {
    let u = Signal::from_fn(&grid, |t| TruncatedGaussian::default().eval(t))?;
    let g = Signal::from_fn(&grid, reference_growth)?;
    Scenario::new(grid, vec![0.0; grid.n_x], u, Growth::Direct(g), SensorModel::default(), None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_speed_grid() -> Grid {
        Grid::new(0.0, 10.0, 101, 0.0, 4.0, 41).unwrap()
    }

    fn hat(x: f64) -> f64 {
        (1.0 - (x - 2.0).abs()).max(0.0)
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let grid = unit_speed_grid();
        let s = Scenario::new(
            grid,
            vec![0.0; grid.n_x],
            Signal::constant(&grid, 0.0).unwrap(),
            Growth::Direct(Signal::constant(&grid, 1.0).unwrap()),
            SensorModel::default(),
            None,
        )
        .unwrap();
        let field = simulate(&s).unwrap();
        assert!(field.values().iter().all(|&v| v == 0.0));
        assert_eq!(analytic_solution(&s, 1.3, 4.4).unwrap(), 0.0);
    }

    #[test]
    fn first_branch_shifts_initial_profile() {
        let grid = unit_speed_grid();
        let psi0: Vec<f64> = grid.xs().iter().map(|&x| hat(x)).collect();
        let s = Scenario::new(
            grid,
            psi0,
            Signal::constant(&grid, 0.0).unwrap(),
            Growth::Direct(Signal::constant(&grid, 1.0).unwrap()),
            SensorModel::default(),
            None,
        )
        .unwrap();
        for &(t, x) in &[(1.0, 3.0), (2.5, 4.25), (0.7, 1.9), (4.0, 5.5)] {
            let v = analytic_solution(&s, t, x).unwrap();
            assert!((v - hat(x - t)).abs() < 1e-12, "({t}, {x})");
        }
    }

    #[test]
    fn second_branch_reads_boundary_history() {
        // u(s) = s with G = 1: psi(t, x) = t - x + x_min where x - x_min < t
        let grid = Grid::new(0.5, 10.0, 96, 0.0, 4.0, 41).unwrap();
        let s = Scenario::new(
            grid,
            vec![0.0; grid.n_x],
            Signal::from_fn(&grid, |t| t).unwrap(),
            Growth::Direct(Signal::constant(&grid, 1.0).unwrap()),
            SensorModel::default(),
            None,
        )
        .unwrap();
        for &(t, x) in &[(1.0, 0.9), (3.7, 1.2), (2.0, 2.4)] {
            let v = analytic_solution(&s, t, x).unwrap();
            assert!((v - (t - x + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_incompatible_corner() {
        let grid = unit_speed_grid();
        let err = Scenario::new(
            grid,
            vec![0.0; grid.n_x],
            Signal::constant(&grid, 1.0).unwrap(),
            Growth::Direct(Signal::constant(&grid, 1.0).unwrap()),
            SensorModel::default(),
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("u(t0) = psi0(x_min)"));
    }

    #[test]
    fn rejects_nonpositive_growth() {
        let grid = unit_speed_grid();
        let r = Scenario::new(
            grid,
            vec![0.0; grid.n_x],
            Signal::constant(&grid, 0.0).unwrap(),
            Growth::Direct(Signal::from_fn(&grid, |t| 1.0 - t / 2.0).unwrap()),
            SensorModel::default(),
            None,
        );
        assert!(matches!(r, Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn rejects_long_batches() {
        let grid = Grid::new(0.0, 10.0, 101, 0.0, 10.0, 41).unwrap();
        let r = Scenario::new(
            grid,
            vec![0.0; grid.n_x],
            Signal::constant(&grid, 0.0).unwrap(),
            Growth::Direct(Signal::constant(&grid, 1.0).unwrap()),
            SensorModel::default(),
            None,
        );
        assert!(r.unwrap_err().to_string().contains("zero-tail"));
    }

    #[test]
    fn concentration_driven_growth() {
        let grid = unit_speed_grid();
        let c_star = Signal::constant(&grid, 1.0).unwrap();
        let c_c = Signal::constant(&grid, 1.5).unwrap();
        let growth = Growth::Concentration { c_c, c_star, k_g: 2.0 };
        let rate = growth.rate().unwrap();
        assert!(rate.values().iter().all(|&g| (g - 1.0).abs() < 1e-15));
    }

    #[test]
    fn boundary_and_initial_rows_are_exact() {
        let s = reference_scenario(Grid::reference()).unwrap();
        let field = simulate(&s).unwrap();
        let grid = s.grid();
        for k in 0..grid.n_t {
            assert_eq!(field.at(k, 0), s.nucleation().at(grid.t(k)));
            assert_eq!(field.at(k, grid.n_x - 1), 0.0);
        }
        assert_eq!(field.row(0), s.psi0());
    }

    #[test]
    fn moment_examples() {
        let grid = Grid::new(0.0, 10.0, 101, 0.0, 1.0, 2).unwrap();
        let zero = NdfField::zeros(grid);
        assert_eq!(third_moment(&zero, 1).unwrap(), 0.0);
        let ones = NdfField::new(grid, vec![1.0; 2 * 101]).unwrap();
        let y = third_moment(&ones, 0).unwrap();
        // rectangle rule over all nodes overshoots 2500 by about dx * 10^3 / 2
        assert!((y - 2500.0).abs() < 0.1 * 1000.0 / 2.0 + 1.0, "y = {y}");
        let mut single = vec![0.0; 2 * 101];
        single[101 + 37] = 2.5;
        let f = NdfField::new(grid, single).unwrap();
        let expected = 2.5 * 0.1 * grid.x(37).powi(3);
        assert!((third_moment(&f, 1).unwrap() - expected).abs() < 1e-12);
        assert!(third_moment(&f, 2).is_err());
    }

    #[test]
    fn truncated_gaussian_shape() {
        let u = TruncatedGaussian::default();
        assert_eq!(u.eval(0.0), 0.0);
        assert!(u.eval(6.0).abs() < 1e-15);
        assert!((u.eval(3.0) - 1.0).abs() < 1e-15);
        assert_eq!(u.eval(7.0), 0.0);
        assert!(u.eval(2.0) > 0.5);
    }
}
