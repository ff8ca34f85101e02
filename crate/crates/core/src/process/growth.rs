//! Size-independent growth rate and its time integral.

use crate::error::{Error, Result};
use crate::grid::Signal;

/// Supersaturation growth law `G = k_g (C_c - C*) / C*`.
pub fn growth_rate(c_c: f64, c_star: f64, k_g: f64) -> Result<f64> {
    if !(c_star > 0.0) {
        return Err(Error::Domain(format!("solubility C* must be positive, got {c_star}")));
    }
    Ok(k_g * (c_c - c_star) / c_star)
}

/// Tabulated cumulative growth `t -> int_{t0}^t G`.
///
/// `G` is treated as piecewise linear between its samples, so the table is the
/// trapezoidal rule and the value inside a segment is the exact quadratic.
/// The inverse solves that quadratic, so forward and inverse maps agree to
/// rounding for any piecewise-linear rate.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeGrowth {
    times: Vec<f64>,
    rates: Vec<f64>,
    table: Vec<f64>,
    increasing: bool,
}

impl CumulativeGrowth {
    pub fn new(rate: &Signal) -> Self {
        let times = rate.times().to_vec();
        let rates = rate.values().to_vec();
        let mut table = Vec::with_capacity(times.len());
        table.push(0.0);
        for i in 1..times.len() {
            let h = times[i] - times[i - 1];
            table.push(table[i - 1] + 0.5 * h * (rates[i - 1] + rates[i]));
        }
        let increasing = table.windows(2).all(|w| w[1] > w[0]);
        CumulativeGrowth { times, rates, table, increasing }
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// `int_{t0}^{t1} G`.
    pub fn total(&self) -> f64 {
        self.table[self.table.len() - 1]
    }

    /// Cumulative values at the sample times.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    fn segment_value(&self, i: usize, sigma: f64) -> f64 {
        let h = self.times[i + 1] - self.times[i];
        let slope = (self.rates[i + 1] - self.rates[i]) / h;
        self.table[i] + sigma * (self.rates[i] + 0.5 * slope * sigma)
    }

    /// Evaluates the cumulative growth at `t`.
    pub fn at(&self, t: f64) -> Result<f64> {
        let n = self.times.len();
        let tol = 1e-12 * (self.end() - self.start()).abs().max(1.0);
        if !(t >= self.start() - tol && t <= self.end() + tol) {
            return Err(Error::Domain(format!("time {t} outside [{}, {}]", self.start(), self.end())));
        }
        if t <= self.start() {
            return Ok(0.0);
        }
        if t >= self.end() || n == 1 {
            return Ok(self.total());
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let sigma = t - self.times[i];
        if sigma == 0.0 {
            return Ok(self.table[i]);
        }
        Ok(self.segment_value(i, sigma))
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.increasing
    }

    /// Time `t` with `int_{t0}^t G = s`.
    pub fn inverse(&self, s: f64) -> Result<f64> {
        if !self.increasing {
            return Err(Error::InvalidScenario(
                "cumulative growth is not strictly increasing (growth rate must be positive)".into(),
            ));
        }
        let total = self.total();
        let tol = 1e-12 * total.max(1.0);
        if !(s >= -tol && s <= total + tol) {
            return Err(Error::Domain(format!("cumulative growth {s} outside [0, {total}]")));
        }
        if s <= 0.0 {
            return Ok(self.start());
        }
        if s >= total {
            return Ok(self.end());
        }
        let i = self.table.partition_point(|&v| v <= s) - 1;
        let r = s - self.table[i];
        if r == 0.0 {
            return Ok(self.times[i]);
        }
        let h = self.times[i + 1] - self.times[i];
        let a = 0.5 * (self.rates[i + 1] - self.rates[i]) / h;
        let b = self.rates[i];
        // root of a*sigma^2 + b*sigma - r = 0 in the cancellation-free form
        let disc = (b * b + 4.0 * a * r).max(0.0);
        let sigma = 2.0 * r / (b + disc.sqrt());
        Ok((self.times[i] + sigma).min(self.times[i + 1]))
    }
}

/// `int_{t0}^t G(tau) d tau` for a sampled growth rate.
pub fn cumulative_growth(rate: &Signal, t: f64) -> Result<f64> {
    CumulativeGrowth::new(rate).at(t)
}
