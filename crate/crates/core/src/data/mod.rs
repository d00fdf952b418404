//! Labelled datasets, synthetic generators, preprocessing and splits.

pub mod idx;

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{bail_arg, shape_err, Error, Result};
use crate::matrix::Matrix;

/// Slack allowed when checking features against the declared bound.
const BOUND_SLACK: f64 = 1e-9;

/// `m` samples in `[-M, M]^d` with 1-based labels in `{1..K}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    bound: f64,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, bound: f64) -> Result<Self> {
        if features.rows() == 0 {
            bail_arg!("dataset must contain at least one sample");
        }
        if labels.len() != features.rows() {
            return Err(shape_err("dataset labels", features.rows(), labels.len()));
        }
        if num_classes < 2 {
            bail_arg!("dataset needs at least two classes, got {num_classes}");
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y == 0 || y > num_classes) {
            bail_arg!("label {y} of sample {i} outside 1..={num_classes}");
        }
        if !(bound.is_finite() && bound >= 0.0) {
            bail_arg!("feature bound must be finite and >= 0, got {bound}");
        }
        let observed = features.max_abs();
        if observed > bound + BOUND_SLACK {
            bail_arg!("feature magnitude {observed} exceeds bound {bound}");
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            bound,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Declared feature bound `M`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            bail_arg!("sample index {bad} out of range for {} samples", self.len());
        }
        Dataset::new(
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
            self.bound,
        )
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Per-class sample counts, index `k-1` for class `k`.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = alloc::vec![0; self.num_classes];
        for &y in &self.labels {
            h[y - 1] += 1;
        }
        h
    }
}

/// Subtracts the per-feature mean of `train` from `train` and every dataset in
/// `others`. Each result's bound becomes its observed max magnitude.
pub fn per_feature_mean_center(train: &Dataset, others: &[Dataset]) -> Result<(Dataset, Vec<Dataset>)> {
    let d = train.dim();
    if let Some(o) = others.iter().find(|o| o.dim() != d) {
        return Err(shape_err("mean centering", d, o.dim()));
    }
    let mut mean = train.features.sum_rows();
    let m = train.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);

    let center = |ds: &Dataset| -> Result<Dataset> {
        let mut features = ds.features.clone();
        for r in 0..features.rows() {
            for (v, mu) in features.row_mut(r).iter_mut().zip(&mean) {
                *v -= mu;
            }
        }
        let bound = features.max_abs();
        Dataset::new(features, ds.labels.clone(), ds.num_classes, bound)
    };
    let centered_train = center(train)?;
    let centered_others = others.iter().map(center).collect::<Result<Vec<_>>>()?;
    Ok((centered_train, centered_others))
}

/// Coordinate bound of [`synthetic_blobs`] data.
pub const BLOB_BOUND: f64 = 3.0;
/// Centers are drawn from `[-BLOB_CENTER_RANGE, BLOB_CENTER_RANGE]^d`.
const BLOB_CENTER_RANGE: f64 = 2.0;
const BLOB_MIN_SEPARATION: f64 = 1.0;
const BLOB_CENTER_TRIES: usize = 1000;

/// `K` isotropic Gaussian clusters with standard deviation `spread`.
///
/// Centers are seeded, drawn from `[-2, 2]^d` and rejection-sampled to be at
/// least one unit apart (if that proves impossible after a bounded number of
/// draws the last draw is kept). Sample `i` belongs to class `i mod K + 1`, so
/// class counts differ by at most one. Coordinates are clipped to `[-3, 3]`.
pub fn synthetic_blobs(m: usize, d: usize, k: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if k < 2 {
        bail_arg!("need at least two classes, got {k}");
    }
    if m < k {
        bail_arg!("need at least one sample per class: m={m} < K={k}");
    }
    if d == 0 {
        bail_arg!("dimension must be >= 1");
    }
    if !(spread.is_finite() && spread >= 0.0) {
        bail_arg!("spread must be finite and >= 0, got {spread}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centers.len() < k {
        let mut candidate = Vec::new();
        for _ in 0..BLOB_CENTER_TRIES {
            candidate = (0..d)
                .map(|_| rng.random_range(-BLOB_CENTER_RANGE..=BLOB_CENTER_RANGE))
                .collect();
            let separated = centers.iter().all(|c| {
                let dist2: f64 = c.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum();
                dist2 >= BLOB_MIN_SEPARATION * BLOB_MIN_SEPARATION
            });
            if separated {
                break;
            }
        }
        centers.push(candidate);
    }

    let mut data = Vec::with_capacity(m * d);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let class = i % k;
        for &c in &centers[class] {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((c + spread * z).clamp(-BLOB_BOUND, BLOB_BOUND));
        }
        labels.push(class + 1);
    }
    Dataset::new(Matrix::new(m, d, data)?, labels, k, BLOB_BOUND)
}

/// Seeded permutation followed by contiguous cuts at the rounded cumulative
/// fractions. Every piece is within one sample of its exact share. A single
/// fraction returns the dataset unchanged.
pub fn split(dataset: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if fractions.is_empty() {
        bail_arg!("no split fractions given");
    }
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        bail_arg!("split fractions must be positive");
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        bail_arg!("split fractions sum to {total}, expected 1");
    }
    if fractions.len() == 1 {
        return Ok(alloc::vec![dataset.clone()]);
    }
    let m = dataset.len();
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut out = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0;
    for (i, f) in fractions.iter().enumerate() {
        cum += f;
        let end = if i + 1 == fractions.len() {
            m
        } else {
            libm::round(cum * m as f64) as usize
        }
        .min(m);
        if end <= start {
            return Err(Error::InvalidArgument(format!(
                "split piece {i} would be empty ({m} samples, fraction {f})"
            )));
        }
        out.push(dataset.subset(&order[start..end])?);
        start = end;
    }
    Ok(out)
}
