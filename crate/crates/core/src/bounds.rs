//! Closed-form capacity and generalization bounds.
//!
//! * [`ra_upper_bound`]: Rademacher average of depth-`L` networks,
//!   `c M sqrt(ln d / m) (p L_φ A)^L`.
//! * [`betti_log_bound`]: natural log of the Betti-numbers complexity bound for
//!   Pfaffian activations, with the big-O constant set to 1.
//! * [`margin_bound`]: the multi-class margin bound minimized over a `γ` grid.
//!
//! The unspecified constant `c` is user-settable and defaults to 1, so the
//! values are relative capacity indicators rather than absolute guarantees.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{bail_arg, Error, Result};
use crate::margin::MarginCurve;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RaBoundParams {
    /// Unspecified constant of the bound.
    pub c: f64,
    /// Input bound `M`: inputs lie in `[-M, M]^d`.
    pub input_bound: f64,
    /// Input dimension `d >= 2`.
    pub input_dim: usize,
    /// Sample size `m`.
    pub sample_size: usize,
    /// Largest pooling region `p`.
    pub pool_region: usize,
    /// Lipschitz constant of the activation.
    pub lipschitz: f64,
    /// Per-unit L1 weight bound `A`.
    pub weight_bound: f64,
    /// Depth `L`.
    pub depth: usize,
}

impl Default for RaBoundParams {
    fn default() -> Self {
        RaBoundParams {
            c: 1.0,
            input_bound: 1.0,
            input_dim: 2,
            sample_size: 1,
            pool_region: 1,
            lipschitz: 1.0,
            weight_bound: 1.0,
            depth: 1,
        }
    }
}

impl RaBoundParams {
    fn validate(&self) -> Result<()> {
        if self.input_dim < 2 {
            bail_arg!("input dimension must be >= 2 so that ln d > 0, got {}", self.input_dim);
        }
        for (name, v) in [
            ("c", self.c),
            ("input bound M", self.input_bound),
            ("Lipschitz constant", self.lipschitz),
            ("weight bound A", self.weight_bound),
        ] {
            if !(v.is_finite() && v > 0.0) {
                bail_arg!("{name} must be finite and > 0, got {v}");
            }
        }
        if self.sample_size == 0 || self.pool_region == 0 || self.depth == 0 {
            bail_arg!("sample size, pooling region and depth must all be >= 1");
        }
        Ok(())
    }

    fn base(&self) -> f64 {
        self.c * self.input_bound * libm::sqrt(libm::log(self.input_dim as f64) / self.sample_size as f64)
    }
}

/// `c M sqrt(ln d / m) (p L_φ A)^L`.
pub fn ra_upper_bound(params: &RaBoundParams) -> Result<f64> {
    params.validate()?;
    let per_layer = params.pool_region as f64 * params.lipschitz * params.weight_bound;
    Ok(params.base() * libm::pow(per_layer, params.depth as f64))
}

/// The same bound with the factor the layer-by-layer argument actually
/// accumulates: `c A M sqrt(ln d / m) (2 p L_φ A)^(L-1)`.
pub fn ra_upper_bound_proof_chain(params: &RaBoundParams) -> Result<f64> {
    params.validate()?;
    let per_layer = 2.0 * params.pool_region as f64 * params.lipschitz * params.weight_bound;
    Ok(params.base() * params.weight_bound * libm::pow(per_layer, (params.depth - 1) as f64))
}

/// Format `(α, β, η)` of a Pfaffian activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PfaffianComplexity {
    pub alpha: u64,
    pub beta: u64,
    pub eta: u64,
}

/// Known complexities: arctan `(3,1,2)`, tanh `(2,1,1)`.
pub fn pfaffian_for_activation(name: &str) -> Result<PfaffianComplexity> {
    match name.trim().to_ascii_lowercase().as_str() {
        "arctan" | "atan" => Ok(PfaffianComplexity {
            alpha: 3,
            beta: 1,
            eta: 2,
        }),
        "tanh" => Ok(PfaffianComplexity {
            alpha: 2,
            beta: 1,
            eta: 1,
        }),
        other => Err(Error::Unsupported(format!(
            "no Pfaffian complexity known for activation `{other}`"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BettiBoundParams {
    pub num_classes: usize,
    pub input_dim: usize,
    /// Total hidden units `h`.
    pub hidden_units: usize,
    pub depth: usize,
    pub pfaffian: PfaffianComplexity,
}

/// Natural log of `(K-1)^(d+1) 2^(hη(hη-1)/2) (d((α+β-1+αβ)(L-1) + β(α+1)))^(d+hη)`.
pub fn betti_log_bound(params: &BettiBoundParams) -> Result<f64> {
    let BettiBoundParams {
        num_classes: k,
        input_dim: d,
        hidden_units: h,
        depth: l,
        pfaffian: PfaffianComplexity { alpha, beta, eta },
    } = *params;
    if k < 2 {
        bail_arg!("need at least two classes, got {k}");
    }
    if l < 2 {
        bail_arg!("depth must be >= 2, got {l}");
    }
    if d == 0 || alpha == 0 || beta == 0 || eta == 0 {
        bail_arg!("input dimension and Pfaffian complexity entries must be >= 1");
    }
    let h_eta = h as f64 * eta as f64;
    if d as f64 > h_eta {
        return Err(Error::Hypothesis(format!(
            "requires d <= h*eta, got d = {d} > {h} * {eta}"
        )));
    }
    let (a, b) = (alpha as f64, beta as f64);
    let chain_degree = (a + b - 1.0 + a * b) * (l - 1) as f64 + b * (a + 1.0);
    let d = d as f64;
    Ok((d + 1.0) * libm::log((k - 1) as f64)
        + h_eta * (h_eta - 1.0) / 2.0 * core::f64::consts::LN_2
        + (d + h_eta) * libm::log(d * chain_degree))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginBound {
    pub value: f64,
    pub argmin_gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginBoundParams<'a> {
    /// Confidence parameter `δ ∈ (0, 1)`.
    pub delta: f64,
    pub sample_size: usize,
    pub num_classes: usize,
    /// Rademacher average of the per-class output class (or an upper bound on it).
    pub rademacher: f64,
    pub curve: &'a MarginCurve,
}

/// The four terms of the margin bound at one `γ`; `log` is the natural log.
pub fn margin_bound_at(gamma: f64, err: f64, delta: f64, m: usize, k: usize, rademacher: f64) -> f64 {
    let m = m as f64;
    let k = k as f64;
    err + 8.0 * k * (2.0 * k - 1.0) / gamma * rademacher
        + libm::sqrt(libm::log(libm::log2(2.0 / gamma)) / m)
        + libm::sqrt(libm::log(2.0 / delta) / (2.0 * m))
}

/// Minimum of the margin bound over the curve's grid, and the `γ` attaining
/// it (the first one on ties).
pub fn margin_bound(params: &MarginBoundParams<'_>) -> Result<MarginBound> {
    let MarginBoundParams {
        delta,
        sample_size,
        num_classes,
        rademacher,
        curve,
    } = *params;
    if !(delta > 0.0 && delta < 1.0) {
        bail_arg!("delta must lie in (0, 1), got {delta}");
    }
    if sample_size == 0 {
        bail_arg!("sample size must be >= 1");
    }
    if num_classes < 2 {
        bail_arg!("need at least two classes");
    }
    if !(rademacher.is_finite() && rademacher >= 0.0) {
        bail_arg!("Rademacher term must be finite and >= 0, got {rademacher}");
    }
    if curve.is_empty() || curve.gammas.len() != curve.errors.len() {
        bail_arg!("margin curve must be non-empty with one error per gamma");
    }
    let mut best: Option<MarginBound> = None;
    for (gamma, err) in curve.points() {
        if !(gamma > 0.0 && gamma < 1.0) {
            bail_arg!("gamma {gamma} outside (0, 1): log log2(2/gamma) undefined");
        }
        let value = margin_bound_at(gamma, err, delta, sample_size, num_classes, rademacher);
        if best.is_none_or(|b| value < b.value) {
            best = Some(MarginBound {
                value,
                argmin_gamma: gamma,
            });
        }
    }
    Ok(best.expect("curve is non-empty"))
}
