//! Uniform slow-time grids, sampled paths and the area functional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{lambda_prime, ModelParams};

/// Uniform grid `t0, t0 + dt, ..., t0 + steps * dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Finest grid on `[t0, t1]` whose step does not exceed `max_dt`.
    pub fn new(t0: f64, t1: f64, max_dt: f64) -> Result<Self> {
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidParameter {
                name: "t1",
                value: t1,
                reason: "must be finite and greater than t0",
            });
        }
        if !(max_dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                value: max_dt,
                reason: "must be positive",
            });
        }
        let raw = (t1 - t0) / max_dt;
        // Absorb rounding so that e.g. 1 / (0.001 / 200) yields 200000 steps, not 200001.
        let steps = ((raw * (1.0 - 1e-12)).ceil() as usize).max(1);
        Ok(Self::with_steps(t0, t1, steps))
    }

    pub fn with_steps(t0: f64, t1: f64, steps: usize) -> Self {
        Self {
            t0,
            dt: (t1 - t0) / steps as f64,
            steps,
        }
    }

    /// Grid on `[t0, t1]` with `dt <= eps / dt_div`.
    pub fn for_params(params: &ModelParams, t0: f64, t1: f64, dt_div: f64) -> Result<Self> {
        if !(dt_div > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt_div",
                value: dt_div,
                reason: "must be positive",
            });
        }
        Self::new(t0, t1, params.epsilon / dt_div)
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t1(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same span with every step split into `factor` substeps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt / factor as f64,
            steps: self.steps * factor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PathKind {
    Deterministic,
    Stochastic { seed: u64 },
}

/// One realization sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub states: Vec<f64>,
    pub kind: PathKind,
}

impl Path {
    pub fn new(grid: TimeGrid, states: Vec<f64>, kind: PathKind) -> Self {
        debug_assert_eq!(states.len(), grid.len());
        Self {
            t0: grid.t0,
            t1: grid.t1(),
            dt: grid.dt,
            states,
            kind,
        }
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            t0: self.t0,
            dt: self.dt,
            steps: self.states.len().saturating_sub(1),
        }
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn span(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn seed(&self) -> Option<u64> {
        match self.kind {
            PathKind::Deterministic => None,
            PathKind::Stochastic { seed } => Some(seed),
        }
    }

    pub fn first(&self) -> f64 {
        self.states[0]
    }

    pub fn last(&self) -> f64 {
        *self.states.last().expect("paths are never empty")
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.states.iter().enumerate().map(|(k, &x)| (self.time(k), x))
    }

    /// Keep every `stride`-th state (the endpoint is kept only when it falls on the stride).
    pub fn thinned(&self, stride: usize) -> Path {
        if stride <= 1 {
            return self.clone();
        }
        let states: Vec<f64> = self.states.iter().step_by(stride).copied().collect();
        let dt = self.dt * stride as f64;
        Path {
            t0: self.t0,
            t1: self.t0 + (states.len() - 1) as f64 * dt,
            dt,
            states,
            kind: self.kind,
        }
    }
}

/// Streaming composite trapezoid rule on a uniform grid.
///
/// The sum is accumulated interval by interval, so feeding the same samples
/// in the same order always gives the same bits whether the samples come from
/// a stored path or from a running simulation.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Trapezoid {
    sum: f64,
    prev: Option<f64>,
}

impl Trapezoid {
    #[inline]
    pub fn push(&mut self, f: f64) {
        if let Some(p) = self.prev {
            self.sum += 0.5 * (p + f);
        }
        self.prev = Some(f);
    }

    #[inline]
    pub fn integral(&self, dt: f64) -> f64 {
        self.sum * dt
    }
}

/// Number of whole forcing periods covered by `span`.
pub(crate) fn period_count(span: f64) -> Result<f64> {
    let periods = span.round();
    if periods < 1.0 || (span - periods).abs() > 1e-9 {
        return Err(Error::BadSpan { span });
    }
    Ok(periods)
}

/// Hysteresis area `-int x(t) lambda'(t) dt` per forcing period, by the trapezoid rule.
pub fn hysteresis_area(path: &Path, amplitude: f64) -> Result<f64> {
    let periods = period_count(path.span())?;
    let mut trap = Trapezoid::default();
    for (t, x) in path.iter() {
        trap.push(-x * lambda_prime(t, amplitude));
    }
    Ok(trap.integral(path.dt) / periods)
}

/// `-int x(t) lambda'(t) dt` over the path's own span, with no periodicity requirement.
pub fn partial_area(path: &Path, amplitude: f64) -> f64 {
    let mut trap = Trapezoid::default();
    for (t, x) in path.iter() {
        trap.push(-x * lambda_prime(t, amplitude));
    }
    trap.integral(path.dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_step_count_absorbs_rounding() {
        let g = TimeGrid::new(-0.5, 0.5, 0.001 / 200.0).unwrap();
        assert_eq!(g.steps, 200_000);
        let g = TimeGrid::new(-0.5, 0.5, 3e-4 / 200.0).unwrap();
        assert_eq!(g.steps, 666_667);
        assert!(g.dt <= 3e-4 / 200.0);
        assert!((g.t1() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_bad_span() {
        assert!(TimeGrid::new(0.5, 0.5, 0.1).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn constant_path_has_zero_area() {
        let grid = TimeGrid::with_steps(-0.5, 0.5, 1000);
        let path = Path::new(grid, vec![0.7; 1001], PathKind::Deterministic);
        assert!(hysteresis_area(&path, 0.3).unwrap().abs() < 1e-14);
    }

    #[test]
    fn non_integer_span_is_rejected() {
        let grid = TimeGrid::with_steps(-0.5, 0.25, 10);
        let path = Path::new(grid, vec![1.0; 11], PathKind::Deterministic);
        assert_eq!(hysteresis_area(&path, 0.3), Err(Error::BadSpan { span: 0.75 }));
    }

    #[test]
    fn multi_period_area_is_per_period() {
        // x = sin(2 pi t): area per period = -int sin * 2 pi A sin = -pi A.
        let a = 0.4;
        let one = TimeGrid::with_steps(-0.5, 0.5, 4000);
        let two = TimeGrid::with_steps(-0.5, 1.5, 8000);
        let mk = |g: TimeGrid| {
            let xs = (0..g.len())
                .map(|k| (std::f64::consts::TAU * g.time(k)).sin())
                .collect();
            Path::new(g, xs, PathKind::Deterministic)
        };
        let a1 = hysteresis_area(&mk(one), a).unwrap();
        let a2 = hysteresis_area(&mk(two), a).unwrap();
        assert!((a1 + std::f64::consts::PI * a).abs() < 1e-9);
        assert!((a1 - a2).abs() < 1e-9);
    }

    #[test]
    fn thinning_keeps_grid() {
        let grid = TimeGrid::with_steps(0.0, 1.0, 10);
        let path = Path::new(grid, (0..11).map(f64::from).collect(), PathKind::Deterministic);
        let thin = path.thinned(5);
        assert_eq!(thin.states, vec![0.0, 5.0, 10.0]);
        assert!((thin.t1 - 1.0).abs() < 1e-15);
        assert!((thin.dt - 0.5).abs() < 1e-15);
    }
}
