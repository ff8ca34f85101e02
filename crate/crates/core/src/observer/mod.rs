//! Bank of scalar KKL observers `z' = lambda z + y` and the kernel functionals
//! `T_lambda(psi) = int a_lambda psi dx` they track.
//!
//! Along any batch satisfying the zero-tail hypothesis,
//! `T_lambda(psi)(t) - z(t) = e^{lambda (t - t0)} (T_lambda(psi)(t0) - z(t0))`,
//! so every observer state converges exponentially to its functional without
//! any knowledge of the nucleation inflow.

mod cache;
mod kernel;

pub use cache::KernelCache;
pub use kernel::{functional_t, observation_matrix, solve_kernel, KernelBank, KernelField};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Signal;

/// How the bank values are laid out inside `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Uniform,
    LogUniform,
}

/// Pairwise distinct, strictly negative observer gains.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaBank {
    lambdas: Vec<f64>,
}

impl LambdaBank {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::Domain("lambda bank is empty".into()));
        }
        if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l < 0.0)) {
            return Err(Error::Domain(format!("observer gains must be strictly negative, got {l}")));
        }
        let mut sorted = lambdas.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("observer gains must be pairwise distinct".into()));
        }
        Ok(LambdaBank { lambdas })
    }

    /// `count` gains spread over `[min, max]`, ordered from `min` to `max`.
    pub fn spaced(min: f64, max: f64, count: usize, spacing: Spacing) -> Result<Self> {
        if !(min < max && max < 0.0) {
            return Err(Error::Domain(format!("lambda range must satisfy min < max < 0, got [{min}, {max}]")));
        }
        if count == 0 {
            return Err(Error::Domain("lambda count must be at least 1".into()));
        }
        if count == 1 {
            return LambdaBank::new(vec![0.5 * (min + max)]);
        }
        let last = (count - 1) as f64;
        let lambdas = match spacing {
            Spacing::Uniform => {
                (0..count).map(|i| if i + 1 == count { max } else { min + (max - min) * i as f64 / last }).collect()
            }
            Spacing::LogUniform => {
                let (lo, hi) = ((-min).ln(), (-max).ln());
                (0..count).map(|i| -(lo + (hi - lo) * i as f64 / last).exp()).collect()
            }
        };
        LambdaBank::new(lambdas)
    }

    pub fn values(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Time integration of the observer ODE between output samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverScheme {
    /// Exact for piecewise-constant output; stable for every `lambda < 0`.
    #[default]
    Exponential,
    /// Forward Euler, stable only for `|lambda| dt < 2`.
    ExplicitEuler,
}

/// One exponential-integrator step of `z' = lambda z + y` with `y` held at
/// `y_k` over `dt`.
pub fn observer_update(z: f64, lambda: f64, y_k: f64, dt: f64) -> f64 {
    let decay = (lambda * dt).exp();
    // (e^{lambda dt} - 1) / lambda without cancellation for small lambda dt
    let gain = (lambda * dt).exp_m1() / lambda;
    decay * z + gain * y_k
}

/// One forward-Euler step of `z' = lambda z + y`.
pub fn euler_update(z: f64, lambda: f64, y_k: f64, dt: f64) -> f64 {
    z + dt * (lambda * z + y_k)
}

/// Observer trajectories for a whole bank, one row per gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverBank {
    lambdas: LambdaBank,
    times: Vec<f64>,
    z0: Vec<f64>,
    z: Vec<f64>,
}

impl ObserverBank {
    pub fn lambdas(&self) -> &LambdaBank {
        &self.lambdas
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn z0(&self) -> &[f64] {
        &self.z0
    }

    /// Trajectory of observer `i` over the time grid.
    pub fn trajectory(&self, i: usize) -> &[f64] {
        let n = self.times.len();
        &self.z[i * n..(i + 1) * n]
    }

    /// Bank state `z(t_k)`.
    pub fn snapshot(&self, k: usize) -> Vec<f64> {
        let n = self.times.len();
        (0..self.lambdas.len()).map(|i| self.z[i * n + k]).collect()
    }

    /// Rebuilds a bank from stored trajectories (one row per gain).
    pub fn from_trajectories(lambdas: LambdaBank, times: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != lambdas.len() || rows.iter().any(|r| r.len() != times.len()) {
            return Err(Error::Shape("observer trajectories do not match the bank".into()));
        }
        let z0 = rows.iter().map(|r| r[0]).collect();
        Ok(ObserverBank { lambdas, times, z0, z: rows.concat() })
    }
}

/// Integrates every observer of the bank against the sampled output `y`.
pub fn run_observer_bank(lambdas: &LambdaBank, y: &Signal, z0: &[f64], scheme: ObserverScheme) -> Result<ObserverBank> {
    if z0.len() != lambdas.len() {
        return Err(Error::Shape(format!("{} initial states for {} observers", z0.len(), lambdas.len())));
    }
    let times = y.times();
    let ys = y.values();
    let step = match scheme {
        ObserverScheme::Exponential => observer_update,
        ObserverScheme::ExplicitEuler => euler_update,
    };
    let rows: Vec<Vec<f64>> = lambdas
        .values()
        .par_iter()
        .zip(z0.par_iter())
        .map(|(&lambda, &start)| {
            let mut row = Vec::with_capacity(times.len());
            row.push(start);
            for k in 1..times.len() {
                let dt = times[k] - times[k - 1];
                row.push(step(row[k - 1], lambda, ys[k - 1], dt));
            }
            row
        })
        .collect();
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("observer states diverged (explicit Euler needs |lambda| dt < 2)".into()));
    }
    ObserverBank::from_trajectories(lambdas.clone(), times.to_vec(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn bank_validation() {
        assert!(LambdaBank::new(vec![]).is_err());
        assert!(LambdaBank::new(vec![-1.0, 0.0]).is_err());
        assert!(LambdaBank::new(vec![-1.0, -2.0, -1.0]).is_err());
        assert!(LambdaBank::spaced(-1.0, 0.0, 3, Spacing::Uniform).is_err());
        assert!(LambdaBank::spaced(-1.0, -10.0, 3, Spacing::Uniform).is_err());
        let b = LambdaBank::spaced(-100.0, -1.0, 200, Spacing::Uniform).unwrap();
        assert_eq!(b.len(), 200);
        assert_eq!(b.values()[0], -100.0);
        assert_eq!(b.values()[199], -1.0);
        let l = LambdaBank::spaced(-100.0, -1.0, 3, Spacing::LogUniform).unwrap();
        assert!((l.values()[1] + 10.0).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_step_decays() {
        let z = observer_update(2.0, -3.0, 0.0, 0.25);
        assert!((z - 2.0 * (-0.75f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn stiff_step_does_not_blow_up() {
        let z = observer_update(1.0, -100.0, 0.0, 0.1);
        assert!((z - (-10.0f64).exp()).abs() < 1e-18);
        // oracle: forward Euler with 1000 substeps
        let mut e = 1.0;
        for _ in 0..1000 {
            e = euler_update(e, -100.0, 0.0, 1e-4);
        }
        assert!((z - e).abs() < 5e-6);
        assert!(euler_update(1.0, -100.0, 0.0, 0.1).abs() > 1.0);
    }

    #[test]
    fn step_response() {
        let g = Grid::new(0.0, 1.0, 2, 0.0, 3.0, 31).unwrap();
        let y = Signal::constant(&g, 1.0).unwrap();
        let bank = LambdaBank::new(vec![-1.0, -2.0]).unwrap();
        let obs = run_observer_bank(&bank, &y, &[0.0, 0.0], ObserverScheme::Exponential).unwrap();
        for (i, &l) in bank.values().iter().enumerate() {
            for (k, &t) in g.ts().iter().enumerate() {
                let exact = (1.0 - (l * t).exp()) / -l;
                assert!((obs.trajectory(i)[k] - exact).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_input_zero_state() {
        let g = Grid::reference();
        let y = Signal::constant(&g, 0.0).unwrap();
        let bank = LambdaBank::spaced(-10.0, -1.0, 5, Spacing::Uniform).unwrap();
        let obs = run_observer_bank(&bank, &y, &[0.0; 5], ObserverScheme::Exponential).unwrap();
        assert!((0..5).all(|i| obs.trajectory(i).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn explicit_euler_divergence_is_reported() {
        let g = Grid::new(0.0, 1.0, 2, 0.0, 100.0, 2001).unwrap();
        let y = Signal::constant(&g, 1.0).unwrap();
        let bank = LambdaBank::new(vec![-1000.0]).unwrap();
        let r = run_observer_bank(&bank, &y, &[0.0], ObserverScheme::ExplicitEuler);
        assert!(r.is_err());
    }

    #[test]
    fn permuting_gains_permutes_rows() {
        let g = Grid::new(0.0, 1.0, 2, 0.0, 2.0, 21).unwrap();
        let y = Signal::from_fn(&g, |t| (3.0 * t).sin() + t).unwrap();
        let a = LambdaBank::new(vec![-0.5, -4.0, -9.0]).unwrap();
        let b = LambdaBank::new(vec![-9.0, -0.5, -4.0]).unwrap();
        let oa = run_observer_bank(&a, &y, &[1.0, 2.0, 3.0], ObserverScheme::Exponential).unwrap();
        let ob = run_observer_bank(&b, &y, &[3.0, 1.0, 2.0], ObserverScheme::Exponential).unwrap();
        assert_eq!(oa.trajectory(0), ob.trajectory(1));
        assert_eq!(oa.trajectory(1), ob.trajectory(2));
        assert_eq!(oa.trajectory(2), ob.trajectory(0));
    }
}
