//! Reverse-mode automatic differentiation, dense networks, and optimizers.
//!
//! The [`tape`] module provides the Wengert-list engine, [`nn`] builds dense
//! feedforward networks on top of it, and [`adam`] updates flat parameter
//! vectors from the resulting gradients.

pub mod adam;
pub mod nn;
pub mod tape;

pub use adam::{AdamConfig, Optimizer};
pub use nn::{Activation, Layer, Mlp, MlpNodes};
pub use tape::{NodeId, Tape};
