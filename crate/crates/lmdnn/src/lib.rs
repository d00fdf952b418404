//! Experiment harness around [`lmdnn_core`]: JSON configuration, MNIST IDX
//! loading, depth and penalty sweeps, CSV export and gnuplot scripts.

pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod plots;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use lmdnn_core as core;
