//! Ensemble Kalman filtering with iterative correction of observation model
//! error.
//!
//! When the observation function `g` handed to a filter differs from the map
//! `h` that actually produced the data, the state estimates are biased. This
//! crate alternates two steps until the correction settles:
//!
//! 1. filter the record with the current observation function `g + b`;
//! 2. compute residuals `y_k - g(x_k)` against the filter's estimates and
//!    smooth them with a kernel average over nearest neighbors in
//!    delay-coordinate space, giving the next correction `b`.
//!
//! No training pairs of states and observations are needed; neighbors are
//! found among delay vectors built from the observations alone.
//!
//! Modules:
//! - [`dynamics`]: Lorenz-63, Lorenz-96 and custom models, RK4, twin data.
//! - [`observation`]: observation functions, delay index, kernel smoothing.
//! - [`enkf`]: ensemble Kalman filter with adaptive Q/R estimation.
//! - [`omec`]: the correction loop and its diagnostics.
//! - [`harness`]: scenario presets, reports and CSV output.

pub(crate) mod csvio;
pub mod dynamics;
pub mod enkf;
pub mod error;
pub mod harness;
mod linalg;
pub mod metrics;
pub mod observation;
pub mod omec;

pub use error::{OmecError, Result};
