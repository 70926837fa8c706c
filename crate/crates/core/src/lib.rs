//! Forced double-well Langevin dynamics and the statistics of its hysteresis cycles.
//!
//! The state obeys `dx = F(x, lambda(t))/eps dt + sigma/sqrt(eps) dW` in slow
//! time, with `F(x, lambda) = x - x^3 + lambda` and `lambda(t) = -A cos(2 pi t)`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod det;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod model;
pub mod path;
pub mod scaling;
pub mod sde;

pub use error::{Error, Result};
pub use model::{classify, equilibria, Case, ModelParams, Regime, Thresholds, LAMBDA_C, X_C};
pub use path::{hysteresis_area, Path, PathKind, TimeGrid};
