//! Core of a toolkit for training classifiers with margin-penalized losses and
//! relating depth to generalization through margins and capacity bounds.
//!
//! - [`network`]: dense / convolutional / pooling layers, forward and backward passes
//! - [`loss`]: softmax cross entropy and the margin-penalized `C1`, `C2` losses
//! - [`margin`]: margins, empirical margin error curves, 0-1 error
//! - [`bounds`]: Rademacher, Betti-number and margin bound calculators
//! - [`optim`]: SGD with momentum and weight decay, learning-rate schedules, training loop
//! - [`data`]: datasets, IDX parsing, synthetic blobs, splits and centering
//! - [`gradcheck`]: finite-difference gradient verification
//!
//! The crate is `no_std` (it needs `alloc`). All floating-point math goes
//! through `libm` and every reduction has a fixed order, so results are
//! bit-reproducible for a given seed.

#![no_std]

extern crate alloc;

pub mod bounds;
pub mod data;
mod error;
pub mod gradcheck;
pub mod loss;
pub mod margin;
pub mod matrix;
pub mod network;
pub mod optim;

pub use data::Dataset;
pub use error::{Error, Result};
pub use loss::{LossKind, LossValue, MarginSpace};
pub use margin::MarginCurve;
pub use matrix::Matrix;
pub use network::{Activation, LayerSpec, Network, NetworkSpec, PoolMode};
pub use optim::{Schedule, TrainConfig};
