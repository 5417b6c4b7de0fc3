//! Conditional path generation with signature matching.
//!
//! This crate implements an estimator for filtering and prediction in
//! partially observed diffusions. A two-stage neural generator consumes an
//! observation path up to time s and emits sample paths of the hidden signal
//! on [s, t]; it is trained by matching expected truncated path signatures
//! against a linear-regression oracle fitted on simulated data. For scalar
//! linear systems an exact Kalman filter and predictor serve as the
//! reference.
//!
//! Module map:
//! - [`tensor_algebra`]: the truncated tensor algebra signatures live in.
//! - [`paths`]: piecewise-linear paths on time partitions.
//! - [`signature`]: exact signatures of piecewise-linear paths.
//! - [`sde`]: Euler-Maruyama simulation of the signal/observation system.
//! - [`autodiff`]: a small reverse-mode tape, MLPs, and optimizers.
//! - [`generator`]: the two-stage conditional generator.
//! - [`training`]: signature regression and the distance-matching loss.
//! - [`kalman`]: the scalar Kalman-Bucy filter and predictor.

pub mod autodiff;
pub mod error;
pub mod generator;
pub mod kalman;
pub mod paths;
pub mod rng;
pub mod sde;
pub mod signature;
pub mod tensor_algebra;
pub mod training;

pub use error::{Error, Result};
