//! Command-line pipeline around [`sigwgan_core`]: dataset simulation,
//! generator training, evaluation against the closed-form filter, and
//! plot-ready CSV emission.
//!
//! The binary is a thin wrapper over [`args::run`]; everything it can do is
//! also callable as a library, which is how the integration tests drive it.

pub mod args;
pub mod artifacts;
pub mod commands;
pub mod config;
