//! Softmax cross entropy and its margin-penalized variants.
//!
//! With `λ` the penalty coefficient, `ρ` the margin of the (softmaxed) outputs
//! and `K` the number of classes:
//!
//! * `C  = -ln σ_y`
//! * `C1 = C + λ (1 - ρ)²`
//! * `C2 = C + λ/(K-1) Σ_{k≠y} (1 - (σ_y - σ_k))²`
//!
//! Penalties are evaluated on softmax probabilities by default, where 1 is the
//! upper bound of the margin. [`MarginSpace::Raw`] evaluates them on the raw
//! network outputs instead.
//!
//! Class labels are 1-based throughout (`y ∈ {1..K}`).

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{bail_arg, shape_err, Error, Result};
use crate::matrix::{Dims, Matrix};

/// Lower clamp on the true-class probability inside `-ln`.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "alloc::string::String", into = "alloc::string::String")]
pub enum LossKind {
    CrossEntropy,
    C1 { lambda: f64 },
    C2 { lambda: f64 },
}

impl LossKind {
    pub fn lambda(&self) -> f64 {
        match *self {
            LossKind::CrossEntropy => 0.0,
            LossKind::C1 { lambda } | LossKind::C2 { lambda } => lambda,
        }
    }

    /// Same family with a different coefficient. `CrossEntropy` stays as is.
    pub fn with_lambda(self, lambda: f64) -> Self {
        match self {
            LossKind::CrossEntropy => LossKind::CrossEntropy,
            LossKind::C1 { .. } => LossKind::C1 { lambda },
            LossKind::C2 { .. } => LossKind::C2 { lambda },
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "c",
            LossKind::C1 { .. } => "c1",
            LossKind::C2 { .. } => "c2",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::CrossEntropy => f.write_str("c"),
            LossKind::C1 { lambda } => write!(f, "c1:{lambda}"),
            LossKind::C2 { lambda } => write!(f, "c2:{lambda}"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    /// Parses `c`, `c1:<λ>` or `c2:<λ>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("c") {
            return Ok(LossKind::CrossEntropy);
        }
        let Some((family, lambda)) = s.split_once(':') else {
            bail_arg!("loss `{s}`: expected `c`, `c1:<lambda>` or `c2:<lambda>`");
        };
        let lambda: f64 = lambda
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("loss `{s}`: bad lambda")))?;
        if !(lambda.is_finite() && lambda >= 0.0) {
            bail_arg!("loss `{s}`: lambda must be finite and >= 0");
        }
        match family.trim().to_ascii_lowercase().as_str() {
            "c1" => Ok(LossKind::C1 { lambda }),
            "c2" => Ok(LossKind::C2 { lambda }),
            _ => bail_arg!("loss `{s}`: unknown family `{family}`"),
        }
    }
}

impl TryFrom<alloc::string::String> for LossKind {
    type Error = Error;
    fn try_from(s: alloc::string::String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossKind> for alloc::string::String {
    fn from(k: LossKind) -> Self {
        k.to_string()
    }
}

/// Output space in which margins (and margin penalties) are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginSpace {
    #[default]
    Softmax,
    Raw,
}

impl fmt::Display for MarginSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarginSpace::Softmax => "softmax",
            MarginSpace::Raw => "raw",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub base_ce: f64,
    pub penalty: f64,
}

#[inline]
pub(crate) fn class_index(y: usize, k: usize) -> Result<usize> {
    if y == 0 || y > k {
        bail_arg!("label {y} outside 1..={k}");
    }
    Ok(y - 1)
}

/// Index of the largest entry other than `skip`; ties go to the lowest index.
#[inline]
pub(crate) fn best_competitor(values: &[f64], skip: usize) -> usize {
    let mut best = usize::MAX;
    for (k, &v) in values.iter().enumerate() {
        if k != skip && (best == usize::MAX || v > values[best]) {
            best = k;
        }
    }
    best
}

pub fn softmax(outputs: &[f64]) -> Vec<f64> {
    let mut probs = outputs.to_vec();
    softmax_in_place(&mut probs);
    probs
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `-ln probs_y`, with `probs_y` clamped below at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], y: usize) -> Result<f64> {
    let i = class_index(y, probs.len())?;
    Ok(-libm::log(probs[i].max(PROB_FLOOR)))
}

/// `λ (1 - ρ)²` with `ρ = v_y - max_{k≠y} v_k`.
pub fn penalty_c1(values: &[f64], y: usize, lambda: f64) -> Result<f64> {
    let i = class_index(y, values.len())?;
    if values.len() < 2 {
        bail_arg!("margin needs at least two classes");
    }
    let rho = values[i] - values[best_competitor(values, i)];
    Ok(lambda * ((1.0 - rho) * (1.0 - rho)))
}

/// `λ/(K-1) Σ_{k≠y} (1 - (v_y - v_k))²`.
pub fn penalty_c2(values: &[f64], y: usize, lambda: f64) -> Result<f64> {
    let i = class_index(y, values.len())?;
    let k = values.len();
    if k < 2 {
        bail_arg!("margin needs at least two classes");
    }
    let sum: f64 = values
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| {
            let gap = 1.0 - (values[i] - v);
            gap * gap
        })
        .sum();
    Ok(lambda / (k - 1) as f64 * sum)
}

/// Loss value and its gradient with respect to the raw outputs, with
/// penalties measured on softmax probabilities.
pub fn loss_and_grad(kind: LossKind, outputs: &[f64], y: usize) -> Result<(LossValue, Vec<f64>)> {
    loss_and_grad_in(kind, MarginSpace::Softmax, outputs, y)
}

pub fn loss_and_grad_in(
    kind: LossKind,
    space: MarginSpace,
    outputs: &[f64],
    y: usize,
) -> Result<(LossValue, Vec<f64>)> {
    let mut grad = vec![0.0; outputs.len()];
    let value = loss_and_grad_into(kind, space, outputs, y, &mut grad)?;
    Ok((value, grad))
}

fn loss_and_grad_into(
    kind: LossKind,
    space: MarginSpace,
    outputs: &[f64],
    y: usize,
    grad: &mut [f64],
) -> Result<LossValue> {
    let k = outputs.len();
    if k < 2 {
        bail_arg!("need at least two classes, got {k}");
    }
    let i = class_index(y, k)?;
    let lambda = kind.lambda();
    if !(lambda.is_finite() && lambda >= 0.0) {
        bail_arg!("lambda must be finite and >= 0, got {lambda}");
    }
    let probs = softmax(outputs);
    let base_ce = -libm::log(probs[i].max(PROB_FLOOR));
    grad.copy_from_slice(&probs);
    grad[i] -= 1.0;

    // λ = 0 takes no penalty path at all, so C1{0} and C2{0} are bit-identical to C.
    if kind == LossKind::CrossEntropy || lambda == 0.0 {
        return Ok(LossValue {
            total: base_ce,
            base_ce,
            penalty: 0.0,
        });
    }

    let values: &[f64] = match space {
        MarginSpace::Softmax => &probs,
        MarginSpace::Raw => outputs,
    };
    // dP/dv for the penalty P over the margin-space values v
    let mut dv = vec![0.0; k];
    let penalty = match kind {
        LossKind::C1 { .. } => {
            let c = best_competitor(values, i);
            let gap = 1.0 - (values[i] - values[c]);
            dv[i] = -2.0 * lambda * gap;
            dv[c] = 2.0 * lambda * gap;
            lambda * (gap * gap)
        }
        LossKind::C2 { .. } => {
            let scale = lambda / (k - 1) as f64;
            let mut sum = 0.0;
            for j in (0..k).filter(|&j| j != i) {
                let gap = 1.0 - (values[i] - values[j]);
                sum += gap * gap;
                dv[j] = 2.0 * scale * gap;
                dv[i] -= 2.0 * scale * gap;
            }
            scale * sum
        }
        LossKind::CrossEntropy => unreachable!(),
    };

    match space {
        MarginSpace::Raw => {
            for (g, d) in grad.iter_mut().zip(&dv) {
                *g += d;
            }
        }
        MarginSpace::Softmax => {
            // softmax Jacobian: ∂σ_j/∂f_l = σ_j (δ_jl - σ_l)
            let weighted: f64 = dv.iter().zip(&probs).map(|(d, p)| d * p).sum();
            for ((g, d), p) in grad.iter_mut().zip(&dv).zip(&probs) {
                *g += p * (d - weighted);
            }
        }
    }
    Ok(LossValue {
        total: base_ce + penalty,
        base_ce,
        penalty,
    })
}

/// Mean loss over a batch and the gradient of that mean with respect to the
/// `b x K` outputs.
pub fn batch_loss_and_grad(
    kind: LossKind,
    space: MarginSpace,
    outputs: &Matrix,
    labels: &[usize],
) -> Result<(LossValue, Matrix)> {
    let b = outputs.rows();
    if labels.len() != b {
        return Err(shape_err("batch labels", b, labels.len()));
    }
    if b == 0 {
        bail_arg!("empty batch");
    }
    let mut grad = Matrix::zeros(b, outputs.cols());
    let mut acc = LossValue::default();
    for (s, &y) in labels.iter().enumerate() {
        let v = loss_and_grad_into(kind, space, outputs.row(s), y, grad.row_mut(s))?;
        acc.total += v.total;
        acc.base_ce += v.base_ce;
        acc.penalty += v.penalty;
    }
    let inv = 1.0 / b as f64;
    grad.scale(inv);
    Ok((
        LossValue {
            total: acc.total * inv,
            base_ce: acc.base_ce * inv,
            penalty: acc.penalty * inv,
        },
        grad,
    ))
}

/// Mean loss of `outputs` against `labels`, without gradients.
pub fn batch_loss(kind: LossKind, space: MarginSpace, outputs: &Matrix, labels: &[usize]) -> Result<LossValue> {
    if outputs.dims() != Dims(labels.len(), outputs.cols()) {
        return Err(shape_err("batch labels", outputs.rows(), labels.len()));
    }
    batch_loss_and_grad(kind, space, outputs, labels).map(|(v, _)| v)
}
