//! Per-layer forward and backward kernels operating on batches stored one
//! sample per row.

use alloc::vec;
use alloc::vec::Vec;

use super::spec::{PoolMode, Shape};
use crate::matrix::Matrix;

pub(crate) struct ConvGeometry {
    pub input: Shape,
    pub output: Shape,
    pub kernel: [usize; 2],
    pub stride: usize,
}

impl ConvGeometry {
    /// Row of the `(c*kh*kw) x filters` weight matrix for tap `(ch, kr, kc)`.
    #[inline]
    fn tap(&self, ch: usize, kr: usize, kc: usize) -> usize {
        (ch * self.kernel[0] + kr) * self.kernel[1] + kc
    }
}

pub(crate) fn dense_forward(x: &Matrix, weights: &Matrix, bias: &[f64]) -> Matrix {
    let mut pre = x.matmul(weights).expect("dense shapes validated by caller");
    if !bias.is_empty() {
        for r in 0..pre.rows() {
            for (v, b) in pre.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
    }
    pre
}

/// Returns `(weight grad, bias grad, input grad)` for a dense layer given the
/// gradient `delta` at its pre-activations.
pub(crate) fn dense_backward(
    x: &Matrix,
    delta: &Matrix,
    weights: &Matrix,
    with_bias: bool,
    need_input_grad: bool,
) -> (Matrix, Vec<f64>, Option<Matrix>) {
    let dw = x.t_matmul(delta).expect("trace shapes validated");
    let db = if with_bias { delta.sum_rows() } else { Vec::new() };
    let dx = need_input_grad.then(|| delta.matmul_t(weights).expect("trace shapes validated"));
    (dw, db, dx)
}

pub(crate) fn conv_forward(x: &Matrix, g: &ConvGeometry, weights: &Matrix, bias: &[f64]) -> Matrix {
    let (ih, iw) = (g.input.height, g.input.width);
    let (oh, ow) = (g.output.height, g.output.width);
    let filters = g.output.channels;
    let mut pre = Matrix::zeros(x.rows(), g.output.size());
    for s in 0..x.rows() {
        let xs = x.row(s);
        let out = pre.row_mut(s);
        for f in 0..filters {
            let b = bias.get(f).copied().unwrap_or(0.0);
            for orow in 0..oh {
                for ocol in 0..ow {
                    let mut acc = b;
                    for ch in 0..g.input.channels {
                        for kr in 0..g.kernel[0] {
                            let base = ch * ih * iw + (orow * g.stride + kr) * iw + ocol * g.stride;
                            for kc in 0..g.kernel[1] {
                                acc += weights.get(g.tap(ch, kr, kc), f) * xs[base + kc];
                            }
                        }
                    }
                    out[f * oh * ow + orow * ow + ocol] = acc;
                }
            }
        }
    }
    pre
}

pub(crate) fn conv_backward(
    x: &Matrix,
    delta: &Matrix,
    g: &ConvGeometry,
    weights: &Matrix,
    with_bias: bool,
    need_input_grad: bool,
) -> (Matrix, Vec<f64>, Option<Matrix>) {
    let (ih, iw) = (g.input.height, g.input.width);
    let (oh, ow) = (g.output.height, g.output.width);
    let filters = g.output.channels;
    let mut dw = Matrix::zeros(weights.rows(), weights.cols());
    let mut db = if with_bias { vec![0.0; filters] } else { Vec::new() };
    let mut dx = need_input_grad.then(|| Matrix::zeros(x.rows(), x.cols()));
    for s in 0..x.rows() {
        let xs = x.row(s);
        let ds = delta.row(s);
        for f in 0..filters {
            for orow in 0..oh {
                for ocol in 0..ow {
                    let d = ds[f * oh * ow + orow * ow + ocol];
                    if let Some(b) = db.get_mut(f) {
                        *b += d;
                    }
                    for ch in 0..g.input.channels {
                        for kr in 0..g.kernel[0] {
                            let base = ch * ih * iw + (orow * g.stride + kr) * iw + ocol * g.stride;
                            for kc in 0..g.kernel[1] {
                                let tap = g.tap(ch, kr, kc);
                                let cur = dw.get(tap, f);
                                dw.set(tap, f, cur + d * xs[base + kc]);
                                if let Some(dx) = dx.as_mut() {
                                    dx.row_mut(s)[base + kc] += d * weights.get(tap, f);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dw, db, dx)
}

/// Pools `region` consecutive entries along the width axis. For max pooling
/// also returns, per pooled output, the input index that attained the max
/// (lowest index on ties).
pub(crate) fn pool_forward(x: &Matrix, mode: PoolMode, region: usize) -> (Matrix, Vec<usize>) {
    // width % region == 0, so windows never straddle rows or channels
    let out_cols = x.cols() / region;
    let mut out = Matrix::zeros(x.rows(), out_cols);
    let mut argmax = match mode {
        PoolMode::Max => Vec::with_capacity(x.rows() * out_cols),
        PoolMode::Avg => Vec::new(),
    };
    for s in 0..x.rows() {
        let xs = x.row(s);
        let os = out.row_mut(s);
        for (j, window) in xs.chunks_exact(region).enumerate() {
            match mode {
                PoolMode::Max => {
                    let mut best = 0;
                    for (k, &v) in window.iter().enumerate() {
                        if v > window[best] {
                            best = k;
                        }
                    }
                    os[j] = window[best];
                    argmax.push(j * region + best);
                }
                PoolMode::Avg => {
                    os[j] = window.iter().sum::<f64>() / region as f64;
                }
            }
        }
    }
    (out, argmax)
}

pub(crate) fn pool_backward(delta: &Matrix, in_cols: usize, mode: PoolMode, region: usize, argmax: &[usize]) -> Matrix {
    let mut dx = Matrix::zeros(delta.rows(), in_cols);
    let out_cols = delta.cols();
    for s in 0..delta.rows() {
        let ds = delta.row(s);
        let dxs = dx.row_mut(s);
        for (j, &d) in ds.iter().enumerate() {
            match mode {
                PoolMode::Max => dxs[argmax[s * out_cols + j]] += d,
                PoolMode::Avg => {
                    let share = d / region as f64;
                    for v in &mut dxs[j * region..(j + 1) * region] {
                        *v += share;
                    }
                }
            }
        }
    }
    dx
}
