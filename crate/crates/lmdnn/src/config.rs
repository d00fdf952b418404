//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "data":    {"source": "synthetic", "samples": 2000, "dim": 10, "classes": 3,
//!               "spread": 1.0, "seed": 0, "test_fraction": 0.25},
//!   "base": {
//!     "network": {"input_dim": 10, "input_bound": 3.0, "num_classes": 3,
//!                 "layers": [{"kind": "dense", "out": 64, "activation": "tanh"},
//!                            {"kind": "dense", "out": 3, "activation": "identity"}]},
//!     "train":   {"loss": "c", "batch_size": 64, "momentum": 0.9, "weight_decay": 0.0005,
//!                 "schedule": {"kind": "inverse_poly", "base_lr": 0.01}, "epochs": 5}
//!   },
//!   "axis":  {"kind": "depth", "depths": [2, 3, 4, 5], "total_hidden": 256, "activation": "tanh"},
//!   "seeds": [1, 2, 3]
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use lmdnn_core::loss::MarginSpace;
use lmdnn_core::margin::{default_gamma_grid, validate_gamma_grid};
use lmdnn_core::optim::iterations_for_epochs;
use lmdnn_core::{Activation, LossKind, NetworkSpec, Schedule, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Gaussian blobs, split into train and test parts.
    Synthetic {
        samples: usize,
        dim: usize,
        classes: usize,
        spread: f64,
        seed: u64,
        test_fraction: f64,
    },
    /// The first `train_samples` / `test_samples` images of the official
    /// MNIST files (all of them when omitted).
    Mnist {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dir: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_samples: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_samples: Option<usize>,
    },
}

/// [`TrainConfig`] without the seed, with the run length given either as
/// `iterations` or as `epochs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub loss: LossKind,
    #[serde(default)]
    pub margin_space: MarginSpace,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

impl TrainSection {
    pub fn resolve(&self, seed: u64, train_samples: usize) -> TrainConfig {
        let iterations = match (self.iterations, self.epochs) {
            (Some(n), _) => n,
            (None, Some(e)) => iterations_for_epochs(train_samples, self.batch_size, e),
            (None, None) => 0,
        };
        TrainConfig {
            loss: self.loss,
            margin_space: self.margin_space,
            batch_size: self.batch_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule: self.schedule.clone(),
            iterations,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        match (self.iterations, self.epochs) {
            (Some(_), Some(_)) => return config_err("train: give either `iterations` or `epochs`, not both"),
            (None, None) => return config_err("train: one of `iterations` or `epochs` is required"),
            _ => {}
        }
        self.resolve(0, 1)
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    pub network: NetworkSpec,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyFamily {
    C1,
    C2,
}

impl PenaltyFamily {
    pub fn with_lambda(self, lambda: f64) -> LossKind {
        match self {
            PenaltyFamily::C1 => LossKind::C1 { lambda },
            PenaltyFamily::C2 => LossKind::C2 { lambda },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Axis {
    /// Fully connected networks of each depth with `total_hidden` units split
    /// evenly over the hidden layers.
    Depth {
        depths: Vec<usize>,
        total_hidden: usize,
        activation: Activation,
    },
    /// One penalty family over a list of coefficients; `0` is the plain
    /// cross-entropy baseline.
    Lambda { family: PenaltyFamily, lambdas: Vec<f64> },
    /// Cross entropy against both penalized losses at their chosen coefficients.
    Losses { c1_lambda: f64, c2_lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSettings {
    /// Constant of the Rademacher bound.
    #[serde(default = "one")]
    pub c: f64,
    /// Confidence parameter of the margin bound.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn one() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.05
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            c: one(),
            delta: default_delta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub base: BaseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Axis>,
    /// Must equal `seeds.len()` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_gamma_grid")]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub bounds: BoundSettings,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|source| Error::ConfigParse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return config_err("seeds: at least one seed is required");
        }
        if let Some(r) = self.repeats {
            if r != self.seeds.len() {
                return config_err(format!("repeats = {r} but {} seeds are listed", self.seeds.len()));
            }
        }
        validate_gamma_grid(&self.gammas).map_err(|e| Error::Config(format!("gammas: {e}")))?;
        self.base
            .network
            .validate()
            .map_err(|e| Error::Config(format!("base.network: {e}")))?;
        self.base.train.validate()?;
        if !(self.bounds.c > 0.0 && self.bounds.delta > 0.0 && self.bounds.delta < 1.0) {
            return config_err("bounds: need c > 0 and delta in (0, 1)");
        }
        match &self.data {
            DataConfig::Synthetic {
                samples,
                classes,
                test_fraction,
                ..
            } => {
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return config_err("data.test_fraction must lie in (0, 1)");
                }
                if samples < classes {
                    return config_err("data.samples must be >= data.classes");
                }
            }
            DataConfig::Mnist { .. } => {}
        }
        match &self.axis {
            Some(Axis::Depth {
                depths, total_hidden, ..
            }) => {
                if depths.is_empty() {
                    return config_err("axis.depths is empty");
                }
                for &l in depths {
                    lmdnn_core::network::allocate_units(*total_hidden, l)
                        .map_err(|e| Error::Config(format!("axis: {e}")))?;
                }
            }
            Some(Axis::Lambda { lambdas, .. }) => {
                if lambdas.is_empty() {
                    return config_err("axis.lambdas is empty");
                }
                if !lambdas.contains(&0.0) {
                    return config_err("axis.lambdas must include 0 (the cross-entropy baseline)");
                }
                if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    return config_err("axis.lambdas must be finite and >= 0");
                }
            }
            Some(Axis::Losses { c1_lambda, c2_lambda }) if !(*c1_lambda >= 0.0 && *c2_lambda >= 0.0) => {
                return config_err("axis: penalty coefficients must be >= 0");
            }
            Some(Axis::Losses { .. }) | None => {}
        }
        Ok(())
    }

    /// Replaces the seed list with a single seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self.repeats = None;
        self
    }

    /// Points an MNIST data source at `dir`.
    pub fn with_data_dir(mut self, dir: PathBuf) -> Self {
        if let DataConfig::Mnist { dir: d, .. } = &mut self.data {
            *d = Some(dir);
        }
        self
    }
}
