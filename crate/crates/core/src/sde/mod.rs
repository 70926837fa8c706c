//! Stochastic paths of `dx = F(x, lambda(t))/eps dt + sigma/sqrt(eps) dW` in slow time.
//!
//! The scheme is explicit Euler-Maruyama with a tamed drift increment,
//! `x <- x + D/(1 + |D|) + sigma sqrt(dt/eps) Z` where `D = dt F / eps`. The
//! cubic drift makes the plain scheme explode on rare large excursions; the
//! taming is of order `D^2` and leaves the weak order at one.

pub mod noise;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{equilibria, force, lambda_of, lambda_prime, ModelParams};
use crate::path::{self, Path, PathKind, TimeGrid, Trapezoid};

pub use noise::{gaussian, mix64, path_seed, NoiseStream};

/// Default ratio `eps / dt` for stochastic paths.
pub const DEFAULT_DT_DIV: f64 = 200.0;

/// States outside `[-STATE_BOUND, STATE_BOUND]` abort a path.
pub const STATE_BOUND: f64 = 10.0;

/// Drift term in slow-time units (before division by `eps`).
pub trait Drift: Copy + Send + Sync {
    fn eval(&self, x: f64, lambda: f64) -> f64;
}

/// The forced double-well drift `x - x^3 + lambda`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoubleWell;

impl Drift for DoubleWell {
    #[inline(always)]
    fn eval(&self, x: f64, lambda: f64) -> f64 {
        force(x, lambda)
    }
}

/// Frozen linear drift `slope * x`, ignoring the forcing. With `slope < 0`
/// the path is an Ornstein-Uhlenbeck process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub slope: f64,
}

impl Drift for Linear {
    #[inline(always)]
    fn eval(&self, x: f64, _lambda: f64) -> f64 {
        self.slope * x
    }
}

/// Forcing and its derivative tabulated on a grid's nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingTable {
    pub lambda: Vec<f64>,
    pub lambda_prime: Vec<f64>,
}

impl ForcingTable {
    pub fn new(grid: &TimeGrid, amplitude: f64) -> Self {
        let (lambda, lambda_prime) = (0..grid.len())
            .map(|k| {
                let t = grid.time(k);
                (lambda_of(t, amplitude), lambda_prime(t, amplitude))
            })
            .unzip();
        Self { lambda, lambda_prime }
    }
}

/// Per-path results.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleObservables {
    pub seed: u64,
    /// `-int x lambda' dt`, per period when the span covers whole periods,
    /// otherwise the integral over the span.
    pub area: f64,
    /// First time the path reaches the crossing level.
    pub tau0: Option<f64>,
    /// Forcing at `tau0`.
    pub lambda0: Option<f64>,
    pub crossed: bool,
    pub x_end: f64,
}

/// First passage through a level, by linear interpolation on the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub tau0: f64,
    pub lambda0: f64,
}

#[inline(always)]
fn tamed_step<D: Drift>(drift: &D, x: f64, lambda: f64, dt_over_eps: f64, noise: f64) -> f64 {
    let delta = drift.eval(x, lambda) * dt_over_eps;
    x + delta / (1.0 + delta.abs()) + noise
}

#[inline(always)]
fn interpolate_crossing(t_next: f64, dt: f64, x_prev: f64, x_next: f64, level: f64) -> f64 {
    t_next - dt * (level - x_next) / (x_prev - x_next)
}

#[inline(always)]
fn reached(x: f64, level: f64, from_above: bool) -> bool {
    if from_above {
        x <= level
    } else {
        x >= level
    }
}

fn area_divisor(span: f64) -> f64 {
    path::period_count(span).unwrap_or(1.0)
}

/// Upper stable equilibrium at `t0` (the unique one above the fold).
pub fn default_start(params: &ModelParams, t0: f64) -> f64 {
    let eq = equilibria(lambda_of(t0, params.amplitude));
    eq.roots[eq.len() - 1]
}

/// A configured simulation: parameters, grid and drift shared by many paths.
#[derive(Clone, Debug)]
pub struct Simulator<D: Drift = DoubleWell> {
    params: ModelParams,
    grid: TimeGrid,
    drift: D,
    x0: f64,
    level: f64,
    refine: u64,
    table: Arc<ForcingTable>,
}

impl Simulator<DoubleWell> {
    pub fn new(params: ModelParams, grid: TimeGrid) -> Result<Self> {
        Simulator::with_drift(params, grid, DoubleWell)
    }

    /// Grid `[t0, t0 + span]` with `dt <= eps / dt_div`.
    pub fn over(params: ModelParams, t0: f64, span: f64, dt_div: f64) -> Result<Self> {
        let grid = TimeGrid::for_params(&params, t0, t0 + span, dt_div)?;
        Self::new(params, grid)
    }
}

impl<D: Drift> Simulator<D> {
    pub fn with_drift(params: ModelParams, grid: TimeGrid, drift: D) -> Result<Self> {
        params.validate()?;
        if !(grid.dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                value: grid.dt,
                reason: "must be positive",
            });
        }
        if grid.dt > 0.5 * params.epsilon {
            return Err(Error::StepTooLarge {
                dt: grid.dt,
                limit: 0.5 * params.epsilon,
            });
        }
        let table = Arc::new(ForcingTable::new(&grid, params.amplitude));
        Ok(Self {
            x0: default_start(&params, grid.t0),
            params,
            grid,
            drift,
            level: 0.0,
            refine: 1,
            table,
        })
    }

    pub fn start_at(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn crossing_level(mut self, level: f64) -> Self {
        self.level = level;
        self
    }

    /// Build each increment from `refine` consecutive fine draws, so that a
    /// grid with `m` times more steps and refinement `refine / m` sees the same
    /// Brownian path.
    pub fn refine(mut self, refine: u64) -> Self {
        self.refine = refine.max(1);
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    fn dt_over_eps(&self) -> f64 {
        self.grid.dt / self.params.epsilon
    }

    fn noise_scale(&self) -> f64 {
        self.params.sigma * (self.grid.dt / self.params.epsilon).sqrt()
    }

    fn check_start(&self) -> Result<bool> {
        if self.x0 == self.level {
            return Err(Error::StartsOnLevel { level: self.level });
        }
        Ok(self.x0 > self.level)
    }

    /// Full path (every `stride`-th state kept) and its observables, computed
    /// on the full-resolution stream.
    pub fn run(&self, seed: u64, stride: usize) -> Result<(Path, CycleObservables)> {
        let stride = stride.max(1);
        let mut states = Vec::with_capacity(self.grid.len() / stride + 1);
        let obs = self.integrate(seed, |k, x| {
            if k % stride == 0 {
                states.push(x);
            }
        })?;
        let dt = self.grid.dt * stride as f64;
        let path = Path {
            t0: self.grid.t0,
            t1: self.grid.t0 + (states.len() - 1) as f64 * dt,
            dt,
            states,
            kind: PathKind::Stochastic { seed },
        };
        Ok((path, obs))
    }

    pub fn path(&self, seed: u64) -> Result<Path> {
        Ok(self.run(seed, 1)?.0)
    }

    /// Observables only, without storing the path.
    pub fn observe(&self, seed: u64) -> Result<CycleObservables> {
        self.integrate(seed, |_, _| {})
    }

    fn integrate(&self, seed: u64, mut record: impl FnMut(usize, f64)) -> Result<CycleObservables> {
        let from_above = self.check_start()?;
        let grid = self.grid;
        let table = &*self.table;
        let dt_over_eps = self.dt_over_eps();
        let noise_scale = self.noise_scale();
        let noisy = noise_scale != 0.0;
        let level = self.level;

        let mut x = self.x0;
        let mut trap = Trapezoid::default();
        let mut tau0 = None;
        record(0, x);
        trap.push(-x * table.lambda_prime[0]);
        for k in 0..grid.steps {
            let noise = if noisy {
                noise_scale * NoiseStream::increment(seed, k as u64, self.refine)
            } else {
                0.0
            };
            let next = tamed_step(&self.drift, x, table.lambda[k], dt_over_eps, noise);
            if !(next.abs() <= STATE_BOUND) {
                return Err(Error::NonFinite {
                    t: grid.time(k + 1),
                    seed: Some(seed),
                });
            }
            if tau0.is_none() && reached(next, level, from_above) {
                tau0 = Some(interpolate_crossing(grid.time(k + 1), grid.dt, x, next, level));
            }
            x = next;
            record(k + 1, x);
            trap.push(-x * table.lambda_prime[k + 1]);
        }
        let area = trap.integral(grid.dt) / area_divisor(grid.t1() - grid.t0);
        Ok(CycleObservables {
            seed,
            area,
            tau0,
            lambda0: tau0.map(|t| lambda_of(t, self.params.amplitude)),
            crossed: tau0.is_some(),
            x_end: x,
        })
    }

    /// Observables of `L` paths advanced in lockstep. Each lane performs
    /// exactly the operations of [`Simulator::observe`], so results are
    /// bit-identical to the scalar kernel; interleaving independent lanes
    /// hides the latency of the serial per-path recursion.
    pub fn observe_lanes<const L: usize>(&self, seeds: &[u64; L]) -> Result<[CycleObservables; L]> {
        let from_above = self.check_start()?;
        let grid = self.grid;
        let table = &*self.table;
        let dt_over_eps = self.dt_over_eps();
        let noise_scale = self.noise_scale();
        let noisy = noise_scale != 0.0;
        let level = self.level;
        let refine = self.refine;

        let mut x = [self.x0; L];
        let mut trap = [Trapezoid::default(); L];
        let mut tau0: [Option<f64>; L] = [None; L];
        let mut bad = [false; L];
        for tr in trap.iter_mut() {
            tr.push(-self.x0 * table.lambda_prime[0]);
        }
        for k in 0..grid.steps {
            let lam = table.lambda[k];
            let dlam = table.lambda_prime[k + 1];
            let t_next = grid.time(k + 1);
            for l in 0..L {
                let noise = if noisy {
                    noise_scale * NoiseStream::increment(seeds[l], k as u64, refine)
                } else {
                    0.0
                };
                let prev = x[l];
                let next = tamed_step(&self.drift, prev, lam, dt_over_eps, noise);
                bad[l] |= !(next.abs() <= STATE_BOUND);
                if tau0[l].is_none() && reached(next, level, from_above) {
                    tau0[l] = Some(interpolate_crossing(t_next, grid.dt, prev, next, level));
                }
                x[l] = next;
                trap[l].push(-next * dlam);
            }
            if bad.iter().any(|&b| b) {
                let lane = bad.iter().position(|&b| b).unwrap();
                return Err(Error::NonFinite {
                    t: t_next,
                    seed: Some(seeds[lane]),
                });
            }
        }
        let divisor = area_divisor(grid.t1() - grid.t0);
        Ok(std::array::from_fn(|l| CycleObservables {
            seed: seeds[l],
            area: trap[l].integral(grid.dt) / divisor,
            tau0: tau0[l],
            lambda0: tau0[l].map(|t| lambda_of(t, self.params.amplitude)),
            crossed: tau0[l].is_some(),
            x_end: x[l],
        }))
    }
}

/// One stochastic path on `[t0, t1]` with step at most `dt`.
pub fn simulate_path(params: &ModelParams, x0: f64, t0: f64, t1: f64, dt: f64, seed: u64) -> Result<Path> {
    let grid = TimeGrid::new(t0, t1, dt)?;
    Simulator::new(*params, grid)?.start_at(x0).path(seed)
}

/// Random hysteresis area `-int x(t) lambda'(t) dt` per period.
pub fn cycle_area(path: &Path, amplitude: f64) -> Result<f64> {
    path::hysteresis_area(path, amplitude)
}

/// First passage of a stored path through `level`, searched in the direction
/// away from the starting side. `None` if the path never reaches the level.
pub fn first_crossing(path: &Path, level: f64, amplitude: f64) -> Result<Option<Crossing>> {
    let x0 = path.first();
    if x0 == level {
        return Err(Error::StartsOnLevel { level });
    }
    let from_above = x0 > level;
    Ok(path
        .states
        .windows(2)
        .enumerate()
        .find(|(_, w)| reached(w[1], level, from_above))
        .map(|(k, w)| {
            let tau0 = interpolate_crossing(path.time(k + 1), path.dt, w[0], w[1], level);
            Crossing {
                tau0,
                lambda0: lambda_of(tau0, amplitude),
            }
        }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::det;

    fn small_amplitude() -> ModelParams {
        ModelParams::with_a0(0.001, 0.05, -0.1).unwrap()
    }

    #[test]
    fn zero_noise_matches_rk4() {
        let p = small_amplitude().with_sigma(0.0);
        let sim = Simulator::over(p, -0.5, 1.0, DEFAULT_DT_DIV).unwrap();
        let sde = sim.path(1).unwrap();
        let ode = det::integrate_on_grid(&p, sim.x0(), sim.grid()).unwrap();
        let sup = sde
            .states
            .iter()
            .zip(&ode.states)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-6, "sup-norm {sup:e}");
    }

    #[test]
    fn same_seed_same_path_across_threads() {
        let sim = Simulator::over(small_amplitude(), -0.5, 0.2, 50.0).unwrap();
        let here = sim.path(42).unwrap();
        let there = std::thread::scope(|s| s.spawn(|| sim.path(42).unwrap()).join().unwrap());
        assert_eq!(here.states.len(), there.states.len());
        assert!(here
            .states
            .iter()
            .zip(&there.states)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(here.seed(), Some(42));
    }

    #[test]
    fn lanes_match_scalar_kernel() {
        let sim = Simulator::over(small_amplitude().with_sigma(0.2), -0.5, 1.0, 20.0).unwrap();
        let seeds = [1u64, 2, 3, 4, 5, 6, 7, 8];
        let lanes = sim.observe_lanes(&seeds).unwrap();
        for (obs, &seed) in lanes.iter().zip(&seeds) {
            let scalar = sim.observe(seed).unwrap();
            assert_eq!(obs.area.to_bits(), scalar.area.to_bits());
            assert_eq!(obs.tau0.map(f64::to_bits), scalar.tau0.map(f64::to_bits));
            assert_eq!(obs.x_end.to_bits(), scalar.x_end.to_bits());
        }
    }

    #[test]
    fn streamed_observables_match_stored_path() {
        let p = small_amplitude().with_sigma(0.3);
        let sim = Simulator::over(p, -0.5, 1.0, 50.0).unwrap();
        let (path, obs) = sim.run(11, 1).unwrap();
        assert_eq!(cycle_area(&path, p.amplitude).unwrap().to_bits(), obs.area.to_bits());
        let crossing = first_crossing(&path, 0.0, p.amplitude).unwrap();
        assert_eq!(crossing.map(|c| c.tau0), obs.tau0);
        assert_eq!(obs.crossed, obs.tau0.is_some());
        if let Some(l) = obs.lambda0 {
            assert!(l.abs() <= p.amplitude);
        }
        let (thin, obs_thin) = sim.run(11, 10).unwrap();
        assert_eq!(obs_thin, obs);
        assert_eq!(thin.states.len(), path.states.len() / 10 + 1);
    }

    #[test]
    fn crossing_edge_cases() {
        let grid = TimeGrid::with_steps(0.0, 1.0, 4);
        let positive = Path::new(grid, vec![1.0, 0.5, 0.2, 0.4, 0.9], PathKind::Deterministic);
        assert_eq!(first_crossing(&positive, 0.0, 0.3).unwrap(), None);

        let on_node = Path::new(grid, vec![1.0, 0.5, 0.0, -0.4, 0.9], PathKind::Deterministic);
        let c = first_crossing(&on_node, 0.0, 0.3).unwrap().unwrap();
        assert_eq!(c.tau0, 0.5);
        assert_eq!(c.lambda0, lambda_of(0.5, 0.3));

        let inside = Path::new(grid, vec![1.0, 0.5, -0.5, -0.4, 0.9], PathKind::Deterministic);
        let c = first_crossing(&inside, 0.0, 0.3).unwrap().unwrap();
        assert!((c.tau0 - 0.375).abs() < 1e-15);

        let on_level = Path::new(grid, vec![0.0; 5], PathKind::Deterministic);
        assert!(first_crossing(&on_level, 0.0, 0.3).is_err());
    }

    #[test]
    fn area_mirror_symmetry() {
        // Mirrored path -x under mirrored forcing -lambda (amplitude -A) has the same area.
        let sim = Simulator::over(small_amplitude().with_sigma(0.1), -0.5, 1.0, 20.0).unwrap();
        let path = sim.path(5).unwrap();
        let mirrored = Path {
            states: path.states.iter().map(|x| -x).collect(),
            ..path.clone()
        };
        let a = cycle_area(&path, 0.3).unwrap();
        let b = cycle_area(&mirrored, -0.3).unwrap();
        assert_eq!(a, b);
        let flat = Path {
            states: vec![0.3; path.states.len()],
            ..path
        };
        assert!(cycle_area(&flat, 0.3).unwrap().abs() < 1e-14);
    }

    #[test]
    fn zero_noise_area_matches_det_area() {
        let p = small_amplitude().with_sigma(0.0);
        let orbit = det::upper_orbit(&p, &det::OrbitOptions::default()).unwrap();
        let sim = Simulator::over(p, -0.5, 1.0, DEFAULT_DT_DIV)
            .unwrap()
            .start_at(orbit.fixed_point);
        let obs = sim.observe(0).unwrap();
        let exact = det::det_area(&orbit.path, p.amplitude).unwrap();
        // State error below 1e-6 times int |lambda'| = 4A.
        assert!((obs.area - exact).abs() < 4e-6 * p.amplitude, "{} vs {exact}", obs.area);
    }

    #[test]
    fn nonfinite_reports_seed() {
        let p = ModelParams::new(0.01, 50.0, 0.2).unwrap();
        let sim = Simulator::over(p, -0.5, 1.0, 10.0).unwrap();
        match sim.observe(77) {
            Err(Error::NonFinite { seed, .. }) => assert_eq!(seed, Some(77)),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn step_limit_enforced() {
        let p = small_amplitude();
        let grid = TimeGrid::with_steps(0.0, 1.0, 10);
        assert!(matches!(Simulator::new(p, grid), Err(Error::StepTooLarge { .. })));
    }
}
