use thiserror::Error;

use crate::model::Case;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("step {dt:e} exceeds the explicit stability limit {limit:e} (epsilon / 2)")]
    StepTooLarge { dt: f64, limit: f64 },

    /// The state left the admissible box; `seed` is set for stochastic paths
    /// so that the offending realization can be replayed.
    #[error("state became non-finite or left [-10, 10] at t = {t} (seed {seed:?})")]
    NonFinite { t: f64, seed: Option<u64> },

    #[error("Poincare map iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("a0 = {a0} lies in the transition zone ({lower}, {upper}) where orbit multiplicity is not determined")]
    AmbiguousRegime { a0: f64, lower: f64, upper: f64 },

    #[error("path span {span} is not a positive integer number of forcing periods")]
    BadSpan { span: f64 },

    #[error("parameters classify as {found}, expected {expected}")]
    RegimeMismatch { expected: String, found: Case },

    #[error("grid points outside the {expected} regime: {points:?}")]
    GridRegimeMismatch { expected: String, points: Vec<f64> },

    #[error("path starts exactly on the crossing level {level}")]
    StartsOnLevel { level: f64 },

    #[error("power-law fit needs positive data, got ({x}, {y})")]
    NonPositive { x: f64, y: f64 },

    #[error("fit is degenerate: {0}")]
    Degenerate(&'static str),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("no retained samples; rerun with keep_samples enabled")]
    NoSamples,

    #[error("{0}")]
    Config(String),

    #[error("{context}: {message}")]
    Io { context: String, message: String },
}

impl Error {
    pub fn io(context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            context: context.into(),
            message: err.to_string(),
        }
    }
}
