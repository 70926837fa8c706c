//! Deterministic slow-fast dynamics `eps dx/dt = F(x, lambda(t))`.
//!
//! Integration uses the classical fourth-order Runge-Kutta scheme in slow
//! time with `dt <= eps / dt_div`. Periodic orbits are fixed points of the
//! period map `x(-1/2) -> x(1/2)`; stable ones are found by forward
//! iteration, the unstable middle one by iterating the inverse map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{classify, equilibria, force, force_dx, lambda_of, ModelParams, Stability, Thresholds, X_C};
use crate::path::{self, Path, PathKind, TimeGrid};

/// States outside `[-STATE_BOUND, STATE_BOUND]` abort an integration.
pub const STATE_BOUND: f64 = 10.0;

/// Default ratio `eps / dt` for the deterministic integrator.
pub const DEFAULT_DT_DIV: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetOptions {
    pub dt_div: f64,
}

impl Default for DetOptions {
    fn default() -> Self {
        Self { dt_div: DEFAULT_DT_DIV }
    }
}

#[inline]
fn rk4_step(x: f64, h: f64, inv_eps: f64, lam_t: f64, lam_mid: f64, lam_end: f64) -> f64 {
    let k1 = force(x, lam_t) * inv_eps;
    let k2 = force(x + 0.5 * h * k1, lam_mid) * inv_eps;
    let k3 = force(x + 0.5 * h * k2, lam_mid) * inv_eps;
    let k4 = force(x + h * k3, lam_end) * inv_eps;
    x + h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4)
}

/// Integrates on a prescribed grid. A negative `grid.dt` integrates backward in time.
pub fn integrate_on_grid(params: &ModelParams, x0: f64, grid: &TimeGrid) -> Result<Path> {
    params.validate()?;
    let limit = 0.5 * params.epsilon;
    if grid.dt.abs() > limit {
        return Err(Error::StepTooLarge {
            dt: grid.dt.abs(),
            limit,
        });
    }
    let amp = params.amplitude;
    let h = grid.dt;
    let inv_eps = 1.0 / params.epsilon;
    let mut states = Vec::with_capacity(grid.len());
    let mut x = x0;
    states.push(x);
    let mut lam_t = lambda_of(grid.t0, amp);
    for k in 0..grid.steps {
        let t = grid.time(k);
        let lam_mid = lambda_of(t + 0.5 * h, amp);
        let lam_end = lambda_of(grid.time(k + 1), amp);
        x = rk4_step(x, h, inv_eps, lam_t, lam_mid, lam_end);
        if !(x.abs() <= STATE_BOUND) {
            return Err(Error::NonFinite {
                t: grid.time(k + 1),
                seed: None,
            });
        }
        states.push(x);
        lam_t = lam_end;
    }
    Ok(Path::new(*grid, states, PathKind::Deterministic))
}

/// Solution of the deterministic equation from `x(t0) = x0` up to `t1`.
pub fn integrate_det(params: &ModelParams, x0: f64, t0: f64, t1: f64, opts: &DetOptions) -> Result<Path> {
    let grid = TimeGrid::for_params(params, t0, t1, opts.dt_div)?;
    integrate_on_grid(params, x0, &grid)
}

/// Largest residual `|eps x' - F(x, lambda)|` of a path, with `x'` from
/// centred differences, relative to the largest drift seen on the path.
pub fn ode_defect(path: &Path, params: &ModelParams) -> f64 {
    let xs = &path.states;
    if xs.len() < 3 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    for k in 1..xs.len() - 1 {
        let t = path.time(k);
        let drift = force(xs[k], lambda_of(t, params.amplitude));
        let deriv = params.epsilon * (xs[k + 1] - xs[k - 1]) / (2.0 * path.dt);
        worst = worst.max((deriv - drift).abs());
        scale = scale.max(drift.abs());
    }
    worst / scale.max(f64::MIN_POSITIVE)
}

/// Which equilibrium branch a periodic orbit tracks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
    Zero,
    Unique,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Plus => "plus",
            Branch::Minus => "minus",
            Branch::Zero => "zero",
            Branch::Unique => "unique",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicOrbit {
    /// One period on `[-1/2, 1/2]`.
    pub path: Path,
    pub stability: Stability,
    pub branch: Branch,
    /// `x(-1/2) = x(1/2)`.
    pub fixed_point: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitOptions {
    pub dt_div: f64,
    /// Convergence threshold on `|P(x) - x|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation factor of the fixed-point iteration (1 = plain iteration).
    pub damping: f64,
    pub thresholds: Thresholds,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            dt_div: DEFAULT_DT_DIV,
            tol: 1e-10,
            max_iter: 50,
            damping: 1.0,
            thresholds: Thresholds::default(),
        }
    }
}

fn period_grid(params: &ModelParams, dt_div: f64, forward: bool) -> Result<TimeGrid> {
    let g = TimeGrid::for_params(params, -0.5, 0.5, dt_div)?;
    Ok(if forward {
        g
    } else {
        TimeGrid {
            t0: 0.5,
            dt: -g.dt,
            steps: g.steps,
        }
    })
}

/// Period map `P: x(-1/2) -> x(1/2)`.
pub fn poincare_map(params: &ModelParams, x: f64, dt_div: f64) -> Result<f64> {
    let grid = period_grid(params, dt_div, true)?;
    Ok(integrate_on_grid(params, x, &grid)?.last())
}

/// Inverse period map `P^-1: x(1/2) -> x(-1/2)`.
pub fn inverse_poincare_map(params: &ModelParams, x: f64, dt_div: f64) -> Result<f64> {
    let grid = period_grid(params, dt_div, false)?;
    Ok(integrate_on_grid(params, x, &grid)?.last())
}

fn iterate_fixed_point(params: &ModelParams, seed: f64, opts: &OrbitOptions, forward: bool) -> Result<(f64, usize)> {
    let mut x = seed;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let image = if forward {
            poincare_map(params, x, opts.dt_div)?
        } else {
            inverse_poincare_map(params, x, opts.dt_div)?
        };
        residual = (image - x).abs();
        x += opts.damping * (image - x);
        if residual < opts.tol {
            return Ok((x, it));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

fn orbit_path(params: &ModelParams, fixed_point: f64, opts: &OrbitOptions, forward: bool) -> Result<Path> {
    let grid = period_grid(params, opts.dt_div, forward)?;
    let path = integrate_on_grid(params, fixed_point, &grid)?;
    if forward {
        return Ok(path);
    }
    // Reverse the backward sweep so the orbit runs on [-1/2, 1/2].
    let mut states = path.states;
    states.reverse();
    let fwd = period_grid(params, opts.dt_div, true)?;
    Ok(Path::new(fwd, states, PathKind::Deterministic))
}

/// All periodic orbits of the deterministic equation.
///
/// Three orbits (two stable, one unstable) when `a0 <= gamma0 eps`, a single
/// stable orbit when `a0 >= gamma1 eps`.
pub fn find_periodic_orbits(params: &ModelParams, opts: &OrbitOptions) -> Result<Vec<PeriodicOrbit>> {
    params.validate()?;
    let eps = params.epsilon;
    let a0 = params.a0();
    let lower = opts.thresholds.gamma0 * eps;
    let upper = opts.thresholds.gamma1 * eps;
    let start = equilibria(lambda_of(-0.5, params.amplitude));

    let stable = |seed: f64, branch: Branch| -> Result<PeriodicOrbit> {
        let (fixed_point, iterations) = iterate_fixed_point(params, seed, opts, true)?;
        Ok(PeriodicOrbit {
            path: orbit_path(params, fixed_point, opts, true)?,
            stability: Stability::Stable,
            branch,
            fixed_point,
            iterations,
        })
    };

    let upper_seed = start.upper().unwrap_or(start.roots[start.len() - 1]);
    if a0 <= lower {
        // When the lower well is momentarily absent at t = -1/2, seed from the mirror image.
        let lower_seed = start.lower().unwrap_or(-upper_seed);
        let plus = stable(upper_seed, Branch::Plus)?;
        let minus = stable(lower_seed, Branch::Minus)?;
        let end = equilibria(lambda_of(0.5, params.amplitude));
        let middle_seed = end.middle().unwrap_or(-X_C);
        let (fixed_point, iterations) = iterate_fixed_point(params, middle_seed, opts, false)?;
        let zero = PeriodicOrbit {
            path: orbit_path(params, fixed_point, opts, false)?,
            stability: Stability::Unstable,
            branch: Branch::Zero,
            fixed_point,
            iterations,
        };
        Ok(vec![plus, minus, zero])
    } else if a0 >= upper {
        Ok(vec![stable(upper_seed, Branch::Unique)?])
    } else {
        Err(Error::AmbiguousRegime { a0, lower, upper })
    }
}

/// The stable periodic orbit tracking the upper branch (or the unique orbit).
pub fn upper_orbit(params: &ModelParams, opts: &OrbitOptions) -> Result<PeriodicOrbit> {
    let orbits = find_periodic_orbits(params, opts)?;
    Ok(orbits
        .into_iter()
        .find(|o| matches!(o.branch, Branch::Plus | Branch::Unique))
        .expect("a stable upper orbit always exists"))
}

/// Deterministic hysteresis area `-int x lambda' dt` per period.
pub fn det_area(path: &Path, amplitude: f64) -> Result<f64> {
    path::hysteresis_area(path, amplitude)
}

/// Linearization `a(t) = 1 - 3 x(t)^2` along a deterministic path, its
/// integral `alpha(t, s)` and the variance scale
/// `zeta(t) = exp(2 alpha(t, t0)/eps) / (2|a(t0)|) + (1/eps) int_{t0}^t exp(2 alpha(t, s)/eps) ds`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZetaProfile {
    pub t0: f64,
    pub dt: f64,
    pub epsilon: f64,
    pub a_values: Vec<f64>,
    /// Cumulative `int_{t0}^{t_k} a(u) du`.
    pub alpha_cumulative: Vec<f64>,
    /// `int_{t0}^{t_k} exp(2 alpha(t_k, s)/eps) ds`.
    pub kernel_integral: Vec<f64>,
    pub zeta_values: Vec<f64>,
}

impl ZetaProfile {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.zeta_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeta_values.is_empty()
    }

    /// `alpha(t_i, t_j) = int_{t_j}^{t_i} a(u) du`.
    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        self.alpha_cumulative[i] - self.alpha_cumulative[j]
    }

    /// Running supremum of `zeta`.
    pub fn zeta_hat(&self) -> Vec<f64> {
        self.zeta_values
            .iter()
            .scan(f64::NEG_INFINITY, |m, &z| {
                *m = m.max(z);
                Some(*m)
            })
            .collect()
    }

    /// Variance of the linearized deviation `y_t`, `v(t) = sigma^2/eps int exp(2 alpha(t,s)/eps) ds`.
    pub fn linear_variance(&self, sigma: f64) -> Vec<f64> {
        self.kernel_integral
            .iter()
            .map(|j| sigma * sigma * j / self.epsilon)
            .collect()
    }
}

pub fn zeta_profile(path: &Path, params: &ModelParams) -> ZetaProfile {
    let eps = params.epsilon;
    let dt = path.dt;
    let a_values: Vec<f64> = path.states.iter().map(|&x| force_dx(x)).collect();
    let n = a_values.len();

    let mut alpha_cumulative = Vec::with_capacity(n);
    let mut kernel_integral = Vec::with_capacity(n);
    let mut zeta_values = Vec::with_capacity(n);
    let head = 1.0 / (2.0 * a_values[0].abs());

    let mut alpha = 0.0;
    let mut j = 0.0;
    alpha_cumulative.push(alpha);
    kernel_integral.push(j);
    zeta_values.push(head);
    for k in 1..n {
        let step = 0.5 * dt * (a_values[k - 1] + a_values[k]);
        alpha += step;
        // Trapezoid in s on the same grid, updated in O(1):
        // J_k = e^{2 step/eps} J_{k-1} + dt/2 (e^{2 step/eps} + 1).
        let g = (2.0 * step / eps).exp();
        j = g * j + 0.5 * dt * (g + 1.0);
        alpha_cumulative.push(alpha);
        kernel_integral.push(j);
        zeta_values.push(head * (2.0 * alpha / eps).exp() + j / eps);
    }

    ZetaProfile {
        t0: path.t0,
        dt,
        epsilon: eps,
        a_values,
        alpha_cumulative,
        kernel_integral,
        zeta_values,
    }
}

/// Start of the half period used for the large-noise reference area.
pub const REFERENCE_T0: f64 = -0.25;

/// Typical switching time `t1` of the large-noise regime: `-c1 sigma^(2/3)`
/// before the minimal barrier when `a0 <= eps`, and
/// `-t_c - c1 (sigma^(2/3) min sigma^(4/3)/sqrt(a0))` before the fold otherwise.
pub fn reference_switch_time(params: &ModelParams, c1: f64) -> f64 {
    let s23 = params.sigma.powf(2.0 / 3.0);
    let a0 = params.a0();
    if a0 <= params.epsilon {
        -c1 * s23
    } else {
        let tc = params.fold_time().unwrap_or(0.0);
        -tc - c1 * s23.min(params.sigma.powf(4.0 / 3.0) / a0.sqrt())
    }
}

/// Area of the deterministic cycle that follows the upper branch from
/// `t = -1/4` to `t_switch`, restarts on the lower branch `X*_-(lambda(t_switch))`,
/// and continues to `t = 1/4`; doubled to a full period by symmetry.
pub fn switched_area(params: &ModelParams, t_switch: f64, opts: &DetOptions) -> Result<f64> {
    params.validate()?;
    let t2 = -REFERENCE_T0;
    if !(t_switch > REFERENCE_T0 && t_switch < t2) {
        return Err(Error::InvalidParameter {
            name: "t_switch",
            value: t_switch,
            reason: "switching time must lie inside (-1/4, 1/4); reduce the window constant c1",
        });
    }
    let amp = params.amplitude;
    let x0 = equilibria(lambda_of(REFERENCE_T0, amp))
        .upper()
        .expect("upper well exists at zero forcing");
    let before = integrate_det(params, x0, REFERENCE_T0, t_switch, opts)?;
    let restart = equilibria(lambda_of(t_switch, amp))
        .lower()
        .expect("lower well exists for non-positive forcing");
    let after = integrate_det(params, restart, t_switch, t2, opts)?;

    let half = path::partial_area(&before, amp) + path::partial_area(&after, amp);
    Ok(2.0 * half)
}

/// Reference area of the large-noise regime.
pub fn reference_area(params: &ModelParams, c1: f64, thresholds: &Thresholds, opts: &DetOptions) -> Result<f64> {
    let regime = classify(params, thresholds);
    if !regime.case.is_large_noise() {
        return Err(Error::RegimeMismatch {
            expected: "III".into(),
            found: regime.case,
        });
    }
    switched_area(params, reference_switch_time(params, c1), opts)
}

/// Deterministic area of the stable upper orbit for the given parameters.
pub fn orbit_area(params: &ModelParams, opts: &OrbitOptions) -> Result<f64> {
    let orbit = upper_orbit(params, opts)?;
    det_area(&orbit.path, params.amplitude)
}
