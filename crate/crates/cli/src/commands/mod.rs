//! One module per CLI verb. Each `run` takes a resolved [`crate::config::Run`]
//! and leaves its artifacts in the run's output directory.

pub mod compare;
pub mod evaluate;
pub mod simulate;
pub mod train;
