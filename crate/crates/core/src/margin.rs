//! Classification margins, empirical margin error curves and 0-1 error.
//!
//! The margin of sample `(x, y)` is `f(x, y) - max_{k≠y} f(x, k)`. The empirical
//! margin error at `γ` counts samples with margin `≤ γ` (inclusive), while the
//! 0-1 error counts samples whose arg-max prediction is wrong.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{bail_arg, shape_err, Result};
use crate::loss::{best_competitor, class_index, softmax_in_place, MarginSpace};
use crate::matrix::Matrix;
use crate::network::Network;

/// Samples per forward pass when sweeping a dataset.
const EVAL_CHUNK: usize = 512;

/// Empirical margin error sampled on an ascending grid of `γ ∈ (0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginCurve {
    pub gammas: Vec<f64>,
    pub errors: Vec<f64>,
    pub space: MarginSpace,
}

impl MarginCurve {
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.gammas.iter().copied().zip(self.errors.iter().copied())
    }
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_gamma_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

/// Rejects grids that are empty, not strictly ascending, or leave `(0, 1)`.
pub fn validate_gamma_grid(gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() {
        bail_arg!("empty gamma grid");
    }
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
        bail_arg!("gamma {g} outside (0, 1)");
    }
    if gammas.windows(2).any(|w| w[1] <= w[0]) {
        bail_arg!("gamma grid must be strictly ascending");
    }
    Ok(())
}

/// `outputs[y] - max_{k≠y} outputs[k]` for a 1-based label `y`.
pub fn margin(outputs: &[f64], y: usize) -> Result<f64> {
    if outputs.len() < 2 {
        bail_arg!("margin needs at least two outputs");
    }
    let i = class_index(y, outputs.len())?;
    Ok(outputs[i] - outputs[best_competitor(outputs, i)])
}

/// Fraction of `margins` that are `≤ gamma`.
pub fn empirical_margin_error(margins: &[f64], gamma: f64) -> Result<f64> {
    if margins.is_empty() {
        bail_arg!("empty sample");
    }
    if gamma.is_nan() || gamma <= 0.0 {
        bail_arg!("gamma must be > 0, got {gamma}");
    }
    let hits = margins.iter().filter(|&&r| r <= gamma).count();
    Ok(hits as f64 / margins.len() as f64)
}

fn for_each_output_chunk(
    net: &Network,
    dataset: &Dataset,
    mut f: impl FnMut(&Matrix, &[usize]) -> Result<()>,
) -> Result<()> {
    if dataset.dim() != net.spec().input_dim {
        return Err(shape_err("dataset dimension", net.spec().input_dim, dataset.dim()));
    }
    if dataset.num_classes() != net.num_classes() {
        return Err(shape_err("dataset classes", net.num_classes(), dataset.num_classes()));
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let batch = dataset.features().select_rows(chunk);
        let outputs = net.predict(&batch)?;
        f(&outputs, &dataset.labels()[chunk[0]..chunk[0] + chunk.len()])?;
    }
    Ok(())
}

/// Margin of every sample, measured in `space`.
pub fn dataset_margins(net: &Network, dataset: &Dataset, space: MarginSpace) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(dataset.len());
    let mut buf = Vec::new();
    for_each_output_chunk(net, dataset, |outputs, labels| {
        for (row, &y) in outputs.row_iter().zip(labels) {
            buf.clear();
            buf.extend_from_slice(row);
            if space == MarginSpace::Softmax {
                softmax_in_place(&mut buf);
            }
            out.push(margin(&buf, y)?);
        }
        Ok(())
    })?;
    Ok(out)
}

/// Empirical margin error at each `γ` of a sorted margin list.
pub fn curve_from_margins(margins: &[f64], gammas: &[f64], space: MarginSpace) -> Result<MarginCurve> {
    validate_gamma_grid(gammas)?;
    if margins.is_empty() {
        bail_arg!("empty sample");
    }
    let mut sorted = margins.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let errors = gammas
        .iter()
        .map(|&g| sorted.partition_point(|&r| r <= g) as f64 / m)
        .collect();
    Ok(MarginCurve {
        gammas: gammas.to_vec(),
        errors,
        space,
    })
}

/// One pass over `dataset`, then the empirical margin error at every grid point.
pub fn margin_curve(net: &Network, dataset: &Dataset, gammas: &[f64], space: MarginSpace) -> Result<MarginCurve> {
    validate_gamma_grid(gammas)?;
    let margins = dataset_margins(net, dataset, space)?;
    curve_from_margins(&margins, gammas, space)
}

/// Fraction of samples whose arg-max output (lowest index on ties) differs
/// from the label.
pub fn zero_one_error(net: &Network, dataset: &Dataset) -> Result<f64> {
    let mut wrong = 0usize;
    for_each_output_chunk(net, dataset, |outputs, labels| {
        for (row, &y) in outputs.row_iter().zip(labels) {
            if argmax(row) + 1 != y {
                wrong += 1;
            }
        }
        Ok(())
    })?;
    Ok(wrong as f64 / dataset.len() as f64)
}

/// Index of the largest entry; lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}
