//! Mini-batch SGD with classical momentum and coupled weight decay.
//!
//! Update per weight `w` with gradient `g`, learning rate `lr`, momentum `μ`
//! and decay `λ_wd`:
//!
//! ```text
//! v <- μ v - lr (g + λ_wd w)
//! w <- w + v
//! ```
//!
//! Biases use the same rule without the decay term.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{bail_arg, shape_err, Error, Result};
use crate::loss::{batch_loss_and_grad, LossKind, MarginSpace};
use crate::margin::zero_one_error;
use crate::matrix::Matrix;
use crate::network::{Gradients, Network, NetworkSpec};

/// Learning-rate schedule indexed by the 0-based iteration counter `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `base_lr * (1 + a T)^(-power)`.
    InversePoly {
        base_lr: f64,
        #[serde(default = "default_inv_a")]
        a: f64,
        #[serde(default = "default_inv_power")]
        power: f64,
    },
    /// `rates[i]` for `T` in `(boundaries[i-1], boundaries[i]]`; `rates[0]` up
    /// to and including `boundaries[0]`, the last rate after the last boundary.
    Steps {
        boundaries: Vec<u64>,
        rates: Vec<f64>,
    },
    Constant {
        lr: f64,
    },
}

fn default_inv_a() -> f64 {
    1e-4
}

fn default_inv_power() -> f64 {
    0.75
}

impl Schedule {
    pub fn inverse_poly(base_lr: f64) -> Self {
        Schedule::InversePoly {
            base_lr,
            a: default_inv_a(),
            power: default_inv_power(),
        }
    }

    /// 1e-3 for the first 60k iterations, 1e-4 for the next 5k, then 1e-5.
    pub fn cifar_steps() -> Self {
        Schedule::Steps {
            boundaries: alloc::vec![60_000, 65_000],
            rates: alloc::vec![1e-3, 1e-4, 1e-5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match self {
            Schedule::InversePoly { base_lr, a, power } => {
                if !positive(*base_lr) {
                    bail_arg!("base_lr must be > 0, got {base_lr}");
                }
                if !(a.is_finite() && *a >= 0.0 && power.is_finite() && *power >= 0.0) {
                    bail_arg!("inverse-poly a and power must be finite and >= 0");
                }
            }
            Schedule::Steps { boundaries, rates } => {
                if rates.len() != boundaries.len() + 1 {
                    bail_arg!(
                        "step schedule needs one more rate than boundaries ({} vs {})",
                        rates.len(),
                        boundaries.len()
                    );
                }
                if boundaries.windows(2).any(|w| w[1] <= w[0]) {
                    bail_arg!("step boundaries must be strictly ascending");
                }
                if !rates.iter().all(|r| positive(*r)) {
                    bail_arg!("step rates must be > 0");
                }
            }
            Schedule::Constant { lr } => {
                if !positive(*lr) {
                    bail_arg!("lr must be > 0, got {lr}");
                }
            }
        }
        Ok(())
    }

    pub fn learning_rate(&self, t: u64) -> f64 {
        match self {
            Schedule::InversePoly { base_lr, a, power } => base_lr * libm::pow(1.0 + a * t as f64, -power),
            Schedule::Steps { boundaries, rates } => rates[boundaries.partition_point(|&b| b < t)],
            Schedule::Constant { lr } => *lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    #[serde(default)]
    pub margin_space: MarginSpace,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub iterations: u64,
    pub seed: u64,
}

impl TrainConfig {
    /// Batch 64, momentum 0.9, weight decay 5e-4, inverse-poly decay from `base_lr`.
    pub fn mnist_recipe(loss: LossKind, base_lr: f64, iterations: u64, seed: u64) -> Self {
        TrainConfig {
            loss,
            margin_space: MarginSpace::Softmax,
            batch_size: 64,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: Schedule::inverse_poly(base_lr),
            iterations,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail_arg!("batch_size must be >= 1");
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            bail_arg!("momentum must lie in [0, 1), got {}", self.momentum);
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            bail_arg!("weight_decay must be finite and >= 0, got {}", self.weight_decay);
        }
        let lambda = self.loss.lambda();
        if !(lambda.is_finite() && lambda >= 0.0) {
            bail_arg!("loss lambda must be finite and >= 0");
        }
        self.schedule.validate()
    }
}

/// Iterations needed for `epochs` passes over `samples` with the given batch size.
pub fn iterations_for_epochs(samples: usize, batch_size: usize, epochs: usize) -> u64 {
    (samples.div_ceil(batch_size.max(1)) * epochs) as u64
}

/// Momentum buffers (congruent with the parameters) and the iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Gradients,
    pub iteration: u64,
}

impl OptimizerState {
    pub fn new(net: &Network) -> Self {
        OptimizerState {
            velocity: net.zero_gradients(),
            iteration: 0,
        }
    }
}

/// One SGD update at learning rate `schedule(T)`, then `T += 1`.
pub fn sgd_step(net: &mut Network, grads: &Gradients, state: &mut OptimizerState, config: &TrainConfig) -> Result<()> {
    let n = net.params().len();
    if grads.layers.len() != n || state.velocity.layers.len() != n {
        return Err(shape_err("sgd_step layers", n, grads.layers.len()));
    }
    for ((p, g), v) in net.params().iter().zip(&grads.layers).zip(&state.velocity.layers) {
        if g.weights.dims() != p.weights.dims() || v.weights.dims() != p.weights.dims() {
            return Err(shape_err("sgd_step weights", p.weights.dims(), g.weights.dims()));
        }
        if g.bias.len() != p.bias.len() || v.bias.len() != p.bias.len() {
            return Err(shape_err("sgd_step bias", p.bias.len(), g.bias.len()));
        }
    }
    let lr = config.schedule.learning_rate(state.iteration);
    let (mu, decay) = (config.momentum, config.weight_decay);
    for ((p, g), v) in net
        .params_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.velocity.layers)
    {
        for ((w, &gw), vw) in p
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(g.weights.as_slice())
            .zip(v.weights.as_mut_slice())
        {
            *vw = mu * *vw - lr * (gw + decay * *w);
            *w += *vw;
        }
        for ((b, &gb), vb) in p.bias.iter_mut().zip(&g.bias).zip(&mut v.bias) {
            *vb = mu * *vb - lr * gb;
            *b += *vb;
        }
    }
    let t = state.iteration;
    state.iteration += 1;
    let finite = net.params().iter().zip(&state.velocity.layers).all(|(p, v)| {
        p.weights.is_finite() && v.weights.is_finite() && p.bias.iter().chain(&v.bias).all(|x| x.is_finite())
    });
    if !finite {
        return Err(Error::Divergence {
            iteration: t,
            what: "non-finite parameter or velocity".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
    pub base_ce: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based count of completed passes over the training set.
    pub epoch: usize,
    pub train_err: f64,
    pub test_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub iterations: Vec<IterRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Trains a freshly built network and returns the last-iteration model.
pub fn train(spec: &NetworkSpec, dataset: &Dataset, config: &TrainConfig) -> Result<(Network, TrainHistory)> {
    train_with_eval(spec, dataset, None, config)
}

/// As [`train`], additionally recording the 0-1 error on `test` after every
/// completed epoch.
///
/// The network is built from `config.seed`; mini-batch order comes from a
/// separate ChaCha stream of the same seed, reshuffled at every epoch. The
/// final partial batch of an epoch is kept.
pub fn train_with_eval(
    spec: &NetworkSpec,
    dataset: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    config.validate()?;
    let mut net = Network::build(spec.clone(), config.seed)?;
    if dataset.dim() != spec.input_dim || dataset.num_classes() != spec.num_classes {
        return Err(shape_err(
            "training data",
            format!("d={} K={}", spec.input_dim, spec.num_classes),
            format!("d={} K={}", dataset.dim(), dataset.num_classes()),
        ));
    }
    let mut state = OptimizerState::new(&net);
    let mut history = TrainHistory::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let m = dataset.len();
    let mut order: Vec<usize> = (0..m).collect();
    let mut cursor = m; // forces a shuffle before the first batch
    let mut epoch = 0usize;
    let mut labels = Vec::with_capacity(config.batch_size);

    for t in 0..config.iterations {
        if cursor >= m {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(m);
        let idx = &order[cursor..end];
        cursor = end;

        let batch: Matrix = dataset.features().select_rows(idx);
        labels.clear();
        labels.extend(idx.iter().map(|&i| dataset.labels()[i]));

        let (outputs, trace) = net.forward(&batch).map_err(|e| match e {
            Error::InvalidArgument(what) => Error::Divergence { iteration: t, what },
            other => other,
        })?;
        let (value, out_grad) = batch_loss_and_grad(config.loss, config.margin_space, &outputs, &labels)?;
        if !value.total.is_finite() || !out_grad.is_finite() {
            return Err(Error::Divergence {
                iteration: t,
                what: format!("non-finite loss {}", value.total),
            });
        }
        let grads = net.param_gradients(&trace, &out_grad)?;
        history.iterations.push(IterRecord {
            iter: t,
            lr: config.schedule.learning_rate(state.iteration),
            loss: value.total,
            base_ce: value.base_ce,
            penalty: value.penalty,
        });
        sgd_step(&mut net, &grads, &mut state, config)?;

        if cursor >= m {
            epoch += 1;
            history.epochs.push(EpochRecord {
                epoch,
                train_err: zero_one_error(&net, dataset)?,
                test_err: test.map(|ts| zero_one_error(&net, ts)).transpose()?,
            });
        }
    }
    Ok((net, history))
}
