//! Finite-difference verification of the full analytic gradient
//! (network backward pass composed with the loss gradient).

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail_arg, Result};
use crate::loss::{batch_loss, batch_loss_and_grad, best_competitor, softmax, LossKind, MarginSpace};
use crate::matrix::Matrix;
use crate::network::{Activation, LayerSpec, Network, NetworkSpec, ParamCoord, PoolMode};

/// Largest network the checker accepts.
pub const MAX_PARAMS: usize = 500;
/// Samples in the random probe batch.
pub const PROBE_BATCH: usize = 3;
/// Denominator floor of the relative error, so that vanishing gradients are
/// compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate attaining `max_rel_err`, if any coordinate was checked.
    pub worst: Option<ParamCoord>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a kink (relu sign change,
    /// max-pool winner change, or a change of the strongest competing class).
    pub skipped: usize,
}

/// Piecewise-selection state of a forward pass; central differences are only
/// valid when it does not change across the probe interval.
#[derive(PartialEq)]
struct KinkSignature {
    relu_signs: Vec<bool>,
    pool_winners: Vec<usize>,
    competitors: Vec<usize>,
}

fn signature(
    net: &Network,
    batch: &Matrix,
    labels: &[usize],
    kind: LossKind,
    space: MarginSpace,
) -> Result<KinkSignature> {
    let (outputs, trace) = net.forward(batch)?;
    let mut relu_signs = Vec::new();
    let mut pool_winners = Vec::new();
    for (layer, t) in net.spec().layers.iter().zip(&trace.layers) {
        if layer.activation() == Activation::Relu {
            relu_signs.extend(t.pre.as_slice().iter().map(|&v| v > 0.0));
        }
        if let LayerSpec::Pool {
            mode: PoolMode::Max, ..
        } = layer
        {
            pool_winners.extend_from_slice(&t.argmax);
        }
    }
    let mut competitors = Vec::new();
    if matches!(kind, LossKind::C1 { .. }) {
        for (row, &y) in outputs.row_iter().zip(labels) {
            let values = match space {
                MarginSpace::Softmax => softmax(row),
                MarginSpace::Raw => row.to_vec(),
            };
            competitors.push(best_competitor(&values, y - 1));
        }
    }
    Ok(KinkSignature {
        relu_signs,
        pool_winners,
        competitors,
    })
}

/// Random probe batch: `PROBE_BATCH` inputs uniform in `[-M, M]^d` and uniform labels.
pub fn probe_batch(spec: &NetworkSpec, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let m = if spec.input_bound > 0.0 { spec.input_bound } else { 1.0 };
    let batch = Matrix::from_fn(PROBE_BATCH, spec.input_dim, |_, _| rng.random_range(-m..=m));
    let labels = (0..PROBE_BATCH)
        .map(|_| rng.random_range(1..=spec.num_classes))
        .collect();
    (batch, labels)
}

/// Builds `spec` from `seed`, gives every bias a small random value (so bias
/// gradients are exercised away from the all-zero initialization) and checks
/// every parameter's analytic gradient against central differences of step `step`.
pub fn gradient_check(spec: &NetworkSpec, kind: LossKind, seed: u64, step: f64) -> Result<GradCheckReport> {
    gradient_check_in(spec, kind, MarginSpace::Softmax, seed, step)
}

pub fn gradient_check_in(
    spec: &NetworkSpec,
    kind: LossKind,
    space: MarginSpace,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport> {
    if !(step.is_finite() && step > 0.0) {
        bail_arg!("finite-difference step must be finite and > 0, got {step}");
    }
    let mut net = Network::build(spec.clone(), seed)?;
    if net.num_params() > MAX_PARAMS {
        return Err(crate::Error::InvalidArgument(format!(
            "gradient check limited to {MAX_PARAMS} parameters, network has {}",
            net.num_params()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    for p in net.params_mut() {
        for b in &mut p.bias {
            *b = rng.random_range(-0.1..=0.1);
        }
    }
    let (batch, labels) = probe_batch(spec, seed);
    check_network(&net, &batch, &labels, kind, space, step)
}

/// Gradient check of a given network on a given batch.
pub fn check_network(
    net: &Network,
    batch: &Matrix,
    labels: &[usize],
    kind: LossKind,
    space: MarginSpace,
    step: f64,
) -> Result<GradCheckReport> {
    if !(step.is_finite() && step > 0.0) {
        bail_arg!("finite-difference step must be finite and > 0, got {step}");
    }
    let (outputs, trace) = net.forward(batch)?;
    let (_, out_grad) = batch_loss_and_grad(kind, space, &outputs, labels)?;
    let (grads, _) = net.backward(&trace, &out_grad)?;
    let base_sig = signature(net, batch, labels, kind, space)?;

    let objective = |n: &Network| -> Result<f64> { Ok(batch_loss(kind, space, &n.predict(batch)?, labels)?.total) };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut probe = net.clone();
    let coords: Vec<ParamCoord> = net.param_coords().collect();
    for c in coords {
        let orig = net.param(c);
        *probe.param_mut(c) = orig + step;
        let sig_plus = signature(&probe, batch, labels, kind, space)?;
        let plus = objective(&probe)?;
        *probe.param_mut(c) = orig - step;
        let sig_minus = signature(&probe, batch, labels, kind, space)?;
        let minus = objective(&probe)?;
        *probe.param_mut(c) = orig;

        if sig_plus != base_sig || sig_minus != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads.get(c);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some(c);
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
