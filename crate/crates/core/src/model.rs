//! The forced double-well model: forcing, drift, equilibrium branches and the
//! regime diagram in the `(a0, sigma)` plane.
//!
//! Time is slow time `t = eps * s`, so the forcing has period 1 and the
//! deterministic equation reads `eps * dx/dt = x - x^3 + lambda(t)` with
//! `lambda(t) = -A cos(2 pi t)`.

use std::f64::consts::{LN_2, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Critical forcing `2 / (3 sqrt 3)`: the potential has two wells iff `|lambda| < LAMBDA_C`.
pub const LAMBDA_C: f64 = 0.384_900_179_459_750_5;

/// Position `1 / sqrt 3` of the saddle-node at `lambda = -LAMBDA_C`.
pub const X_C: f64 = 0.577_350_269_189_625_8;

/// Limit of the deterministic large-amplitude cycle area as `eps -> 0`.
pub const STATIC_AREA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub epsilon: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

impl ModelParams {
    pub fn new(epsilon: f64, sigma: f64, amplitude: f64) -> Result<Self> {
        let params = Self {
            epsilon,
            sigma,
            amplitude,
        };
        params.validate()?;
        Ok(params)
    }

    /// Parameters given through the amplitude excess `a0 = A - LAMBDA_C`.
    pub fn with_a0(epsilon: f64, sigma: f64, a0: f64) -> Result<Self> {
        Self::new(epsilon, sigma, LAMBDA_C + a0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: self.epsilon,
                reason: "must lie in (0, 1)",
            });
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                value: self.sigma,
                reason: "must be finite and non-negative",
            });
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "amplitude",
                value: self.amplitude,
                reason: "must be finite and positive",
            });
        }
        Ok(())
    }

    pub fn a0(&self) -> f64 {
        self.amplitude - LAMBDA_C
    }

    pub fn lambda_c(&self) -> f64 {
        LAMBDA_C
    }

    pub fn x_c(&self) -> f64 {
        X_C
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        Self { sigma, ..self }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn with_amplitude_excess(self, a0: f64) -> Self {
        Self {
            amplitude: LAMBDA_C + a0,
            ..self
        }
    }

    /// Slow time `t_c` in `[0, 1/4]` with `A cos(2 pi t_c) = LAMBDA_C`; the upper
    /// branch folds at `-t_c`. `None` when the amplitude never reaches the fold.
    pub fn fold_time(&self) -> Option<f64> {
        (self.amplitude >= LAMBDA_C).then(|| (LAMBDA_C / self.amplitude).acos() / TAU)
    }
}

/// Periodic forcing `-A cos(2 pi t)`.
#[inline]
pub fn lambda_of(t: f64, amplitude: f64) -> f64 {
    -amplitude * (TAU * t).cos()
}

/// Time derivative of [`lambda_of`].
#[inline]
pub fn lambda_prime(t: f64, amplitude: f64) -> f64 {
    TAU * amplitude * (TAU * t).sin()
}

/// Drift `F(x, lambda) = x - x^3 + lambda`.
#[inline]
pub fn force(x: f64, lambda: f64) -> f64 {
    x - x * x * x + lambda
}

/// `dF/dx = 1 - 3 x^2`, the linearization of the drift.
#[inline]
pub fn force_dx(x: f64) -> f64 {
    1.0 - 3.0 * x * x
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    /// Double root at the fold.
    Marginal,
}

impl Stability {
    fn of_root(x: f64) -> Self {
        if force_dx(x) < 0.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        }
    }
}

/// Real roots of `x - x^3 + lambda = 0`, sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumSet {
    pub lambda: f64,
    pub roots: Vec<f64>,
    pub stability: Vec<Stability>,
}

impl EquilibriumSet {
    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Upper stable branch `X*_+`, if it exists at this forcing.
    pub fn upper(&self) -> Option<f64> {
        let last = *self.roots.last()?;
        (self.stability.last() == Some(&Stability::Stable)).then_some(last)
    }

    /// Lower stable branch `X*_-`, if it exists at this forcing.
    pub fn lower(&self) -> Option<f64> {
        let first = *self.roots.first()?;
        (self.stability.first() == Some(&Stability::Stable)).then_some(first)
    }

    /// Unstable middle branch `X*_0` (only in the bistable range).
    pub fn middle(&self) -> Option<f64> {
        (self.roots.len() == 3).then(|| self.roots[1])
    }
}

// |lambda| within this relative distance of LAMBDA_C is treated as the fold.
const FOLD_TOL: f64 = 1e-14;

pub fn equilibria(lambda: f64) -> EquilibriumSet {
    let ratio = lambda / LAMBDA_C;
    if (ratio.abs() - 1.0).abs() <= FOLD_TOL {
        // Roots sum to zero: a double root at -sign(lambda) x_c and a simple one at 2 sign(lambda) x_c.
        let s = lambda.signum();
        let double = -s * X_C;
        let simple = newton_polish(2.0 * s * X_C, lambda);
        let (roots, stability) = if s > 0.0 {
            (vec![double, simple], vec![Stability::Marginal, Stability::Stable])
        } else {
            (vec![simple, double], vec![Stability::Stable, Stability::Marginal])
        };
        return EquilibriumSet {
            lambda,
            roots,
            stability,
        };
    }

    let mut roots = if ratio.abs() < 1.0 {
        // Trigonometric form: x_k = (2/sqrt 3) cos((theta - 2 pi k) / 3), theta = acos(lambda / lambda_c).
        let theta = ratio.acos();
        let r = 2.0 * X_C;
        (0..3)
            .map(|k| r * ((theta - TAU * k as f64) / 3.0).cos())
            .collect::<Vec<_>>()
    } else {
        // Cardano with u * v = 1/3 to avoid cancellation in the second cube root.
        let disc = (0.25 * lambda * lambda - 1.0 / 27.0).sqrt();
        let u = (0.5 * lambda + lambda.signum() * disc).cbrt();
        vec![u + 1.0 / (3.0 * u)]
    };
    for r in roots.iter_mut() {
        *r = newton_polish(*r, lambda);
    }
    roots.sort_by(f64::total_cmp);
    let stability = roots.iter().map(|&x| Stability::of_root(x)).collect();
    EquilibriumSet {
        lambda,
        roots,
        stability,
    }
}

fn newton_polish(x: f64, lambda: f64) -> f64 {
    let slope = force_dx(x);
    if slope.abs() < 1e-6 {
        return x;
    }
    x - force(x, lambda) / slope
}

/// The six parameter regimes (three cases with two subcases each).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    Ia,
    Ib,
    IIa,
    IIb,
    IIIa,
    IIIb,
}

impl Case {
    pub const ALL: [Case; 6] = [Case::Ia, Case::Ib, Case::IIa, Case::IIb, Case::IIIa, Case::IIIb];

    pub fn is_small_amplitude(self) -> bool {
        matches!(self, Case::Ia | Case::Ib)
    }

    pub fn is_large_amplitude(self) -> bool {
        matches!(self, Case::IIa | Case::IIb)
    }

    pub fn is_large_noise(self) -> bool {
        matches!(self, Case::IIIa | Case::IIIb)
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Case::Ia => "Ia",
            Case::Ib => "Ib",
            Case::IIa => "IIa",
            Case::IIb => "IIb",
            Case::IIIa => "IIIa",
            Case::IIIb => "IIIb",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Case::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown regime `{s}`")))
    }
}

/// Multiplicative constants in front of each regime boundary. None of them is
/// fixed by the theory, so all default to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Small-amplitude bound `a0 <= gamma0 * eps`.
    pub gamma0: f64,
    /// Large-amplitude bound `a0 >= gamma1 * eps`.
    pub gamma1: f64,
    /// Multiplier on the noise thresholds separating Cases I/II from Case III.
    pub noise: f64,
    /// Multiplier on the noise thresholds separating subcases a and b.
    pub subcase: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            gamma0: 1.0,
            gamma1: 1.0,
            noise: 1.0,
            subcase: 1.0,
        }
    }
}

impl Thresholds {
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            gamma0: self.gamma0 * factor,
            gamma1: self.gamma1 * factor,
            noise: self.noise * factor,
            subcase: self.subcase * factor,
        }
    }
}

/// Slack of one threshold inequality; positive iff it holds.
///
/// Noise inequalities use `ln(bound / sigma)`; amplitude inequalities, whose
/// sides may have either sign, use `sign(u) ln(1 + |u|)` with `u` the gap in
/// units of `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub inequality: &'static str,
    pub slack: f64,
}

impl Margin {
    pub fn holds(&self) -> bool {
        self.slack >= 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Regime {
    pub case: Case,
    /// Minimum slack of the winning case's conditions.
    pub score: f64,
    pub borderline: bool,
    pub margins: Vec<Margin>,
}

/// A classification is borderline when the deciding slack is below a factor 2.
pub const BORDERLINE_SLACK: f64 = LN_2;

fn signed_log(u: f64) -> f64 {
    u.signum() * u.abs().ln_1p()
}

fn ratio_slack(bound: f64, value: f64) -> f64 {
    if bound.is_nan() || bound <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if value <= 0.0 {
        return f64::INFINITY;
    }
    (bound / value).ln()
}

pub fn classify(params: &ModelParams, thresholds: &Thresholds) -> Regime {
    let eps = params.epsilon;
    let sigma = params.sigma;
    let a0 = params.a0();
    let amp_scale = a0.abs().max(eps);
    let large = eps * a0.max(0.0).sqrt();
    let log_a0 = a0.abs().ln().abs();

    let a0_le = |c: f64| signed_log((c * eps - a0) / eps);
    let m = |inequality: &'static str, slack: f64| Margin { inequality, slack };

    let margins = vec![
        m("a0 <= gamma0*eps", a0_le(thresholds.gamma0)),
        m("a0 >= gamma1*eps", -a0_le(thresholds.gamma1)),
        m("a0 <= eps", a0_le(1.0)),
        m("a0 <= -eps", a0_le(-1.0)),
        m(
            "sigma <= K*(|a0| v eps)^(3/4)",
            ratio_slack(thresholds.noise * amp_scale.powf(0.75), sigma),
        ),
        m(
            "sigma <= K*(eps*sqrt(a0))^(1/2)",
            ratio_slack(thresholds.noise * large.sqrt(), sigma),
        ),
        m(
            "sigma <= k*sqrt(eps)/|log|a0||",
            ratio_slack(thresholds.subcase * eps.sqrt() / log_a0, sigma),
        ),
        m(
            "sigma <= k*(eps*sqrt(a0))^(5/6)",
            ratio_slack(thresholds.subcase * large.powf(5.0 / 6.0), sigma),
        ),
        m(
            "sigma <= k*a0^(3/4)",
            ratio_slack(thresholds.subcase * a0.max(0.0).powf(0.75), sigma),
        ),
    ];
    let s: Vec<f64> = margins.iter().map(|m| m.slack).collect();
    let [small_amp, large_amp, a0_le_eps, a0_le_neg_eps, noise_i, noise_ii, sub_i, sub_ii, sub_iii] = s[..] else {
        unreachable!()
    };

    let score = |case: Case| -> f64 {
        match case {
            Case::Ia => small_amp.min(noise_i).min((-a0_le_neg_eps).max(sub_i)),
            Case::Ib => small_amp.min(noise_i).min(a0_le_neg_eps).min(-sub_i),
            Case::IIa => large_amp.min(noise_ii).min(sub_ii),
            Case::IIb => large_amp.min(noise_ii).min(-sub_ii),
            Case::IIIa => {
                let entry = a0_le_eps.min(-noise_i).max((-a0_le_eps).min(-noise_ii));
                entry.min(a0_le_eps.max(-sub_iii))
            }
            Case::IIIb => (-a0_le_eps).min(-noise_ii).min(sub_iii),
        }
    };

    let mut ranked: Vec<(Case, f64)> = Case::ALL.iter().map(|&c| (c, score(c))).collect();
    // Stable sort keeps the canonical order on ties.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (case, best) = ranked[0];
    let runner_up = ranked[1].1;
    let borderline = best < BORDERLINE_SLACK || runner_up >= 0.0;

    Regime {
        case,
        score: best,
        borderline,
        margins,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn critical_constants() {
        assert_relative_eq!(LAMBDA_C * LAMBDA_C, 4.0 / 27.0, max_relative = 4.0 * f64::EPSILON);
        assert_relative_eq!(X_C * X_C, 1.0 / 3.0, max_relative = 4.0 * f64::EPSILON);
        assert_relative_eq!(LAMBDA_C, 2.0 / (3.0 * 3f64.sqrt()), max_relative = f64::EPSILON);
    }

    #[test]
    fn forcing_values() {
        assert_eq!(lambda_of(0.0, 0.4), -0.4);
        assert!(lambda_of(0.25, 1.0).abs() < 1e-15);
        assert!((lambda_of(0.5, 0.4) - 0.4).abs() < 1e-15);
        assert!(lambda_prime(0.0, 0.4).abs() < 1e-15);
        assert_relative_eq!(lambda_prime(0.25, 1.0), TAU, max_relative = 1e-15);
    }

    #[test]
    fn force_values() {
        assert_eq!(force(1.0, 0.0), 0.0);
        assert!(force(X_C, -LAMBDA_C).abs() < 1e-15);
        assert_eq!(force(0.0, 0.3), 0.3);
        assert_eq!(force_dx(0.0), 1.0);
        assert!(force_dx(X_C).abs() < 1e-15);
    }

    #[test]
    fn equilibria_at_zero_forcing() {
        let eq = equilibria(0.0);
        assert_eq!(eq.len(), 3);
        let expected = [-1.0, 0.0, 1.0];
        for (r, e) in eq.roots.iter().zip(expected) {
            assert!((r - e).abs() < 1e-14, "{r} vs {e}");
        }
        assert_eq!(
            eq.stability,
            vec![Stability::Stable, Stability::Unstable, Stability::Stable]
        );
        assert_eq!(eq.upper(), Some(eq.roots[2]));
        assert_eq!(eq.middle(), Some(eq.roots[1]));
    }

    #[test]
    fn equilibria_at_fold() {
        let eq = equilibria(-LAMBDA_C);
        assert_eq!(eq.len(), 2);
        assert!((eq.roots[0] + 2.0 * X_C).abs() < 1e-14);
        assert!((eq.roots[1] - X_C).abs() < 1e-14);
        assert_eq!(eq.stability, vec![Stability::Stable, Stability::Marginal]);
        assert_eq!(eq.upper(), None);
        assert!(eq.lower().is_some());

        let eq = equilibria(LAMBDA_C);
        assert!((eq.roots[0] + X_C).abs() < 1e-14);
        assert!((eq.roots[1] - 2.0 * X_C).abs() < 1e-14);
        assert_eq!(eq.stability[0], Stability::Marginal);
    }

    #[test]
    fn single_root_matches_bisection() {
        // r^3 - r - 1 changes sign on [1, 2].
        let (mut lo, mut hi) = (1.0_f64, 2.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if force(mid, 1.0) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let eq = equilibria(1.0);
        assert_eq!(eq.len(), 1);
        assert_eq!(eq.stability, vec![Stability::Stable]);
        assert!((eq.roots[0] - 0.5 * (lo + hi)).abs() < 1e-14);
    }

    #[test]
    fn root_count_switches_at_fold() {
        let inside = equilibria(LAMBDA_C * (1.0 - 1e-10));
        let outside = equilibria(LAMBDA_C * (1.0 + 1e-10));
        assert_eq!(inside.len(), 3);
        assert_eq!(outside.len(), 1);
        let inside = equilibria(-LAMBDA_C * (1.0 - 1e-10));
        let outside = equilibria(-LAMBDA_C * (1.0 + 1e-10));
        assert_eq!(inside.len(), 3);
        assert_eq!(outside.len(), 1);
    }

    #[test]
    fn small_amplitude_point_is_ib() {
        let p = ModelParams::with_a0(0.001, 0.05, -0.1).unwrap();
        let r = classify(&p, &Thresholds::default());
        assert_eq!(r.case, Case::Ib);
        assert!(!r.borderline);
        // Subcase boundary sqrt(eps)/|log|a0|| ~ 0.0137.
        let sub = r
            .margins
            .iter()
            .find(|m| m.inequality.starts_with("sigma <= k*sqrt"))
            .unwrap();
        assert_relative_eq!(
            sub.slack,
            (0.001f64.sqrt() / 10f64.ln() / 0.05).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn large_noise_point_is_iiia() {
        let p = ModelParams::with_a0(0.005, 0.16, -0.01).unwrap();
        let r = classify(&p, &Thresholds::default());
        assert_eq!(r.case, Case::IIIa);
        assert!(!r.borderline);
    }

    #[test]
    fn large_amplitude_iia() {
        let p = ModelParams::with_a0(0.005, 0.001, 0.04).unwrap();
        let r = classify(&p, &Thresholds::default());
        assert_eq!(r.case, Case::IIa);
        assert!(!r.borderline);
    }

    #[test]
    fn two_three_boundary_point_is_borderline() {
        let p = ModelParams::with_a0(0.005, 0.04, 0.04).unwrap();
        let r = classify(&p, &Thresholds::default());
        assert!(r.borderline);
        assert!(r.case.is_large_noise() || r.case.is_large_amplitude());
    }

    #[test]
    fn transition_zone_is_borderline() {
        let t = Thresholds {
            gamma0: 0.5,
            gamma1: 4.0,
            ..Thresholds::default()
        };
        let p = ModelParams::with_a0(0.01, 1e-4, 0.02).unwrap();
        let r = classify(&p, &t);
        assert!(r.borderline);
        assert!(r.score < 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ModelParams::new(0.0, 0.1, 0.3).is_err());
        assert!(ModelParams::new(1.0, 0.1, 0.3).is_err());
        assert!(ModelParams::new(0.01, -0.1, 0.3).is_err());
        assert!(ModelParams::new(0.01, 0.1, 0.0).is_err());
        assert!(ModelParams::new(0.01, f64::NAN, 0.3).is_err());
    }

    proptest! {
        #[test]
        fn force_is_odd(x in -3.0..3.0f64, l in -2.0..2.0f64) {
            prop_assert_eq!(force(-x, -l), -force(x, l));
        }

        #[test]
        fn forcing_half_period_antisymmetry(t in -2.0..2.0f64, a in 0.01..2.0f64) {
            prop_assert!((lambda_of(t + 0.5, a) + lambda_of(t, a)).abs() < 1e-14 * a.max(1.0) * 8.0);
        }

        #[test]
        fn root_residuals_are_tiny(l in -3.0..3.0f64) {
            let eq = equilibria(l);
            prop_assert_eq!(eq.len(), if l.abs() < LAMBDA_C { 3 } else { 1 });
            for w in eq.roots.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            for &r in &eq.roots {
                prop_assert!(force(r, l).abs() <= 1e-12);
            }
        }

        #[test]
        fn classify_scale_consistent(
            eps in 1e-4..0.05f64,
            sigma in 1e-4..0.5f64,
            a0 in -0.3..0.3f64,
            factor in 0.1..10.0f64,
        ) {
            let p = ModelParams::with_a0(eps, sigma, a0).unwrap();
            let base = classify(&p, &Thresholds::default());
            let scaled = classify(&p, &Thresholds::default().scaled(factor));
            let names = |r: &Regime| r.margins.iter().map(|m| m.inequality).collect::<Vec<_>>();
            prop_assert_eq!(names(&base), names(&scaled));
        }
    }
}
