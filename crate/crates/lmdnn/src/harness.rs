//! Experiment orchestration: single runs, depth and λ sweeps, loss comparison.
//!
//! Runs execute one after another in `(axis value, seed)` order, which is also
//! the order of every table written to disk. Timing goes to the log only, so
//! re-running a configuration reproduces its CSV files byte for byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lmdnn_core::bounds::{margin_bound, ra_upper_bound, MarginBound, MarginBoundParams, RaBoundParams};
use lmdnn_core::data::{split, synthetic_blobs};
use lmdnn_core::margin::{margin_curve, zero_one_error};
use lmdnn_core::network::allocate_units;
use lmdnn_core::optim::{train_with_eval, TrainHistory};
use lmdnn_core::{Dataset, LossKind, MarginCurve, Network, NetworkSpec, TrainConfig};
use serde::Serialize;

use crate::config::{Axis, BoundSettings, DataConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::io::{self, config_echo, curve_csv, curves_csv, epochs_csv, fmt_sig, history_csv, Csv};

/// Environment variable consulted for the MNIST directory when neither the
/// config nor the command line names one.
pub const MNIST_DIR_ENV: &str = "MNIST_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(cfg: &DataConfig) -> Result<LoadedData> {
    match cfg {
        DataConfig::Synthetic {
            samples,
            dim,
            classes,
            spread,
            seed,
            test_fraction,
        } => {
            let all = synthetic_blobs(*samples, *dim, *classes, *spread, *seed)
                .map_err(|e| Error::Config(format!("data: {e}")))?;
            let mut parts = split(&all, &[1.0 - test_fraction, *test_fraction], *seed)
                .map_err(|e| Error::Config(format!("data: {e}")))?;
            let test = parts.pop().expect("two parts");
            let train = parts.pop().expect("two parts");
            Ok(LoadedData { train, test })
        }
        DataConfig::Mnist {
            dir,
            train_samples,
            test_samples,
        } => {
            let dir = resolve_mnist_dir(dir.as_deref())?;
            let (train, test) = io::load_mnist_dir(&dir)?;
            let take = |ds: Dataset, n: Option<usize>| match n {
                Some(n) if n == 0 || n > ds.len() => Err(Error::Config(format!(
                    "data: requested {n} samples but the file holds {}",
                    ds.len()
                ))),
                Some(n) => Ok(ds.head(n)?),
                None => Ok(ds),
            };
            Ok(LoadedData {
                train: take(train, *train_samples)?,
                test: take(test, *test_samples)?,
            })
        }
    }
}

fn resolve_mnist_dir(dir: Option<&Path>) -> Result<PathBuf> {
    if let Some(d) = dir {
        return Ok(d.to_path_buf());
    }
    std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
        Error::MissingData(format!(
            "no MNIST directory: set data.dir, pass --data or set {MNIST_DIR_ENV}"
        ))
    })
}

fn check_compatible(spec: &NetworkSpec, data: &LoadedData) -> Result<()> {
    for (name, ds) in [("train", &data.train), ("test", &data.test)] {
        if ds.dim() != spec.input_dim || ds.num_classes() != spec.num_classes {
            return Err(Error::Config(format!(
                "network expects d={} K={}, {name} data has d={} K={}",
                spec.input_dim,
                spec.num_classes,
                ds.dim(),
                ds.num_classes()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub train_err: f64,
    pub test_err: f64,
    /// Empirical margin error on the training set.
    pub margin_curve: MarginCurve,
    pub effective_a: f64,
    pub ra_bound: f64,
    pub margin_bound: MarginBound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed(RunMetrics),
    Diverged { iteration: u64, what: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub seed: u64,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub outcome: RunOutcome,
    pub wall_seconds: f64,
}

impl RunResult {
    pub fn metrics(&self) -> Option<&RunMetrics> {
        match &self.outcome {
            RunOutcome::Completed(m) => Some(m),
            RunOutcome::Diverged { .. } => None,
        }
    }
}

/// Rademacher bound of a trained network on `m` samples, with the measured
/// weight bound `A`.
pub fn network_ra_bound(net: &Network, m: usize, c: f64) -> Result<f64> {
    let spec = net.spec();
    let lipschitz = spec
        .layers
        .iter()
        .map(|l| l.activation().lipschitz())
        .fold(0.0, f64::max);
    Ok(ra_upper_bound(&RaBoundParams {
        c,
        input_bound: spec.input_bound,
        input_dim: spec.input_dim,
        sample_size: m,
        pool_region: spec.max_pool_region(),
        lipschitz,
        weight_bound: net.effective_weight_bound(),
        depth: spec.depth(),
    })?)
}

/// Error rates, training margin curve and bound values of a trained network.
pub fn evaluate(
    net: &Network,
    data: &LoadedData,
    cfg: &TrainConfig,
    gammas: &[f64],
    bounds: &BoundSettings,
) -> Result<RunMetrics> {
    let curve = margin_curve(net, &data.train, gammas, cfg.margin_space)?;
    // A zero-weight network has A = 0, where the Rademacher bound is undefined
    // on a log scale but trivially 0.
    let effective_a = net.effective_weight_bound();
    let ra = if effective_a > 0.0 {
        network_ra_bound(net, data.train.len(), bounds.c)?
    } else {
        0.0
    };
    let mb = margin_bound(&MarginBoundParams {
        delta: bounds.delta,
        sample_size: data.train.len(),
        num_classes: net.num_classes(),
        rademacher: ra,
        curve: &curve,
    })?;
    Ok(RunMetrics {
        train_err: zero_one_error(net, &data.train)?,
        test_err: zero_one_error(net, &data.test)?,
        margin_curve: curve,
        effective_a,
        ra_bound: ra,
        margin_bound: mb,
    })
}

/// A single training run. Divergence is recorded in the outcome; every other
/// error is returned.
pub fn run_one(
    spec: &NetworkSpec,
    data: &LoadedData,
    cfg: &TrainConfig,
    gammas: &[f64],
    bounds: &BoundSettings,
) -> Result<(Option<(Network, TrainHistory)>, RunResult)> {
    check_compatible(spec, data)?;
    let start = Instant::now();
    let trained = match train_with_eval(spec, &data.train, Some(&data.test), cfg) {
        Ok(t) => Some(t),
        Err(lmdnn_core::Error::Divergence { iteration, what }) => {
            log::warn!("seed {}: diverged at iteration {iteration}: {what}", cfg.seed);
            let result = RunResult {
                seed: cfg.seed,
                network: spec.clone(),
                train: cfg.clone(),
                outcome: RunOutcome::Diverged { iteration, what },
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            return Ok((None, result));
        }
        Err(e) => return Err(e.into()),
    };
    let (net, history) = trained.expect("handled above");
    let metrics = evaluate(&net, data, cfg, gammas, bounds)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    log::info!(
        "loss {} seed {}: train_err {:.4} test_err {:.4} A {:.3} ({wall_seconds:.1}s)",
        cfg.loss,
        cfg.seed,
        metrics.train_err,
        metrics.test_err,
        metrics.effective_a
    );
    let result = RunResult {
        seed: cfg.seed,
        network: spec.clone(),
        train: cfg.clone(),
        outcome: RunOutcome::Completed(metrics),
        wall_seconds,
    };
    Ok((Some((net, history)), result))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub runs: usize,
    pub completed: usize,
    pub mean_test_err: f64,
    pub min_test_err: f64,
    /// Sample standard deviation (0 for a single run).
    pub std_test_err: f64,
    pub mean_train_err: f64,
    pub mean_effective_a: f64,
    pub mean_ra_bound: f64,
    pub mean_margin_bound: f64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let mu = mean(xs);
            (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}

pub fn stats(runs: &[RunResult]) -> Stats {
    let done: Vec<&RunMetrics> = runs.iter().filter_map(RunResult::metrics).collect();
    let col = |f: fn(&RunMetrics) -> f64| done.iter().map(|m| f(m)).collect::<Vec<f64>>();
    let test = col(|m| m.test_err);
    Stats {
        runs: runs.len(),
        completed: done.len(),
        mean_test_err: mean(&test),
        min_test_err: test.iter().copied().reduce(f64::min).unwrap_or(f64::NAN),
        std_test_err: sample_std(&test),
        mean_train_err: mean(&col(|m| m.train_err)),
        mean_effective_a: mean(&col(|m| m.effective_a)),
        mean_ra_bound: mean(&col(|m| m.ra_bound)),
        mean_margin_bound: mean(&col(|m| m.margin_bound.value)),
    }
}

/// Pointwise mean of the completed runs' training margin curves.
pub fn mean_curve(runs: &[RunResult], gammas: &[f64]) -> Vec<f64> {
    let done: Vec<&RunMetrics> = runs.iter().filter_map(RunResult::metrics).collect();
    (0..gammas.len())
        .map(|i| mean(&done.iter().map(|m| m.margin_curve.errors[i]).collect::<Vec<_>>()))
        .collect()
}

/// All runs for one value of the sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Group {
    /// Axis value as printed in the first CSV column.
    pub key: String,
    /// Extra per-group columns, in header order.
    pub extra: Vec<(String, String)>,
    pub loss: LossKind,
    pub runs: Vec<RunResult>,
}

impl Group {
    pub fn stats(&self) -> Stats {
        stats(&self.runs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    /// `depth`, `lambda` or `loss`.
    pub axis: &'static str,
    pub gammas: Vec<f64>,
    pub groups: Vec<Group>,
}

fn run_group(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    spec: &NetworkSpec,
    loss: LossKind,
    key: String,
    extra: Vec<(String, String)>,
) -> Result<Group> {
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut train = cfg.base.train.resolve(seed, data.train.len());
        train.loss = loss;
        let (_, result) = run_one(spec, data, &train, &cfg.gammas, &cfg.bounds)?;
        runs.push(result);
    }
    Ok(Group { key, extra, loss, runs })
}

/// Depth-`L` fully connected network with `H` hidden units split evenly.
pub fn depth_spec(
    template: &NetworkSpec,
    depth: usize,
    total_hidden: usize,
    activation: lmdnn_core::Activation,
) -> Result<NetworkSpec> {
    let units = allocate_units(total_hidden, depth)?;
    let mut spec = NetworkSpec::mlp(
        template.input_dim,
        template.input_bound,
        &vec![units; depth - 1],
        activation,
        template.num_classes,
    );
    spec.use_bias = template.use_bias;
    Ok(spec)
}

pub fn run_depth_sweep(cfg: &ExperimentConfig, data: &LoadedData) -> Result<SweepReport> {
    let Some(Axis::Depth {
        depths,
        total_hidden,
        activation,
    }) = &cfg.axis
    else {
        return Err(Error::Config("sweep-depth needs a depth axis".into()));
    };
    let mut groups = Vec::new();
    for &depth in depths {
        let spec = depth_spec(&cfg.base.network, depth, *total_hidden, *activation)?;
        let units = allocate_units(*total_hidden, depth)?;
        groups.push(run_group(
            cfg,
            data,
            &spec,
            cfg.base.train.loss,
            depth.to_string(),
            vec![("units_per_layer".into(), units.to_string())],
        )?);
    }
    Ok(SweepReport {
        axis: "depth",
        gammas: cfg.gammas.clone(),
        groups,
    })
}

pub fn run_lambda_sweep(cfg: &ExperimentConfig, data: &LoadedData) -> Result<SweepReport> {
    let Some(Axis::Lambda { family, lambdas }) = &cfg.axis else {
        return Err(Error::Config("sweep-lambda needs a lambda axis".into()));
    };
    let mut groups = Vec::new();
    for &lambda in lambdas {
        let baseline = if lambda == 0.0 { "1" } else { "0" };
        groups.push(run_group(
            cfg,
            data,
            &cfg.base.network,
            family.with_lambda(lambda),
            fmt_sig(lambda),
            vec![("baseline".into(), baseline.into())],
        )?);
    }
    Ok(SweepReport {
        axis: "lambda",
        gammas: cfg.gammas.clone(),
        groups,
    })
}

pub fn compare_losses(cfg: &ExperimentConfig, data: &LoadedData) -> Result<SweepReport> {
    let Some(Axis::Losses { c1_lambda, c2_lambda }) = &cfg.axis else {
        return Err(Error::Config("compare-losses needs a losses axis".into()));
    };
    if cfg.seeds.len() < 3 {
        return Err(Error::Config(format!(
            "compare-losses needs at least 3 seeds, got {}",
            cfg.seeds.len()
        )));
    }
    let kinds = [
        LossKind::CrossEntropy,
        LossKind::C1 { lambda: *c1_lambda },
        LossKind::C2 { lambda: *c2_lambda },
    ];
    let mut groups = Vec::new();
    for kind in kinds {
        groups.push(run_group(
            cfg,
            data,
            &cfg.base.network,
            kind,
            kind.family().to_string(),
            vec![("lambda".into(), fmt_sig(kind.lambda()))],
        )?);
    }
    Ok(SweepReport {
        axis: "loss",
        gammas: cfg.gammas.clone(),
        groups,
    })
}

fn status_cells(r: &RunResult) -> Vec<String> {
    match &r.outcome {
        RunOutcome::Completed(m) => vec![
            "ok".into(),
            fmt_sig(m.train_err),
            fmt_sig(m.test_err),
            fmt_sig(m.effective_a),
            fmt_sig(m.ra_bound),
            fmt_sig(m.margin_bound.value),
            fmt_sig(m.margin_bound.argmin_gamma),
        ],
        RunOutcome::Diverged { iteration, .. } => {
            let mut v = vec![format!("diverged@{iteration}")];
            v.extend(std::iter::repeat_n(String::new(), 6));
            v
        }
    }
}

const RUN_COLUMNS: [&str; 8] = [
    "seed",
    "status",
    "train_err",
    "test_err",
    "effective_a",
    "ra_bound",
    "margin_bound",
    "argmin_gamma",
];

const SUMMARY_COLUMNS: [&str; 9] = [
    "runs",
    "completed",
    "mean_test_err",
    "min_test_err",
    "std_test_err",
    "mean_train_err",
    "mean_effective_a",
    "mean_ra_bound",
    "mean_margin_bound",
];

impl SweepReport {
    pub fn summary_csv(&self) -> Csv {
        let mut header = vec![self.axis];
        if let Some(g) = self.groups.first() {
            header.extend(g.extra.iter().map(|(k, _)| k.as_str()));
        }
        header.extend(SUMMARY_COLUMNS);
        let mut csv = Csv::new(&header);
        for g in &self.groups {
            let s = g.stats();
            let mut row = vec![g.key.clone()];
            row.extend(g.extra.iter().map(|(_, v)| v.clone()));
            row.extend([s.runs.to_string(), s.completed.to_string()]);
            row.extend(
                [
                    s.mean_test_err,
                    s.min_test_err,
                    s.std_test_err,
                    s.mean_train_err,
                    s.mean_effective_a,
                    s.mean_ra_bound,
                    s.mean_margin_bound,
                ]
                .map(fmt_sig),
            );
            csv.push(row);
        }
        csv
    }

    pub fn runs_csv(&self) -> Csv {
        let mut header = vec![self.axis];
        header.extend(RUN_COLUMNS);
        let mut csv = Csv::new(&header);
        for g in &self.groups {
            for r in &g.runs {
                let mut row = vec![g.key.clone(), r.seed.to_string()];
                row.extend(status_cells(r));
                csv.push(row);
            }
        }
        csv
    }

    /// Mean training margin curve of every group, one column per group.
    pub fn curves_csv(&self) -> Csv {
        let series: Vec<(String, Vec<f64>)> = self
            .groups
            .iter()
            .map(|g| (format!("{}_{}", self.axis, g.key), mean_curve(&g.runs, &self.gammas)))
            .collect();
        curves_csv(&self.gammas, &series)
    }

    /// Writes `<prefix>_summary.csv`, `<prefix>_runs.csv` and
    /// `<prefix>_margin_curves.csv` into `dir`.
    pub fn write(&self, dir: &Path, prefix: &str, command: &str, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
        let echo = config_echo(command, cfg);
        let mut written = Vec::new();
        for (name, csv) in [
            ("summary", self.summary_csv()),
            ("runs", self.runs_csv()),
            ("margin_curves", self.curves_csv()),
        ] {
            let path = dir.join(format!("{prefix}_{name}.csv"));
            csv.with_preamble(echo.clone()).write(&path)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Output of the `train` command.
pub struct TrainOutput {
    pub network: Option<Network>,
    pub history: Option<TrainHistory>,
    pub result: RunResult,
}

pub fn run_train(cfg: &ExperimentConfig, data: &LoadedData) -> Result<TrainOutput> {
    let seed = cfg.seeds[0];
    let train = cfg.base.train.resolve(seed, data.train.len());
    let (trained, result) = run_one(&cfg.base.network, data, &train, &cfg.gammas, &cfg.bounds)?;
    let (network, history) = match trained {
        Some((n, h)) => (Some(n), Some(h)),
        None => (None, None),
    };
    Ok(TrainOutput {
        network,
        history,
        result,
    })
}

impl TrainOutput {
    /// `history.csv`, `epochs.csv`, `margin_curve.csv`, `run.csv` and
    /// `model.json`; only `run.csv` when training diverged.
    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
        let echo = config_echo("train", cfg);
        let mut written = Vec::new();
        let mut put = |name: &str, csv: Csv| -> Result<()> {
            let path = dir.join(name);
            csv.with_preamble(echo.clone()).write(&path)?;
            written.push(path);
            Ok(())
        };
        let mut run = Csv::new(&RUN_COLUMNS);
        let mut row = vec![self.result.seed.to_string()];
        row.extend(status_cells(&self.result));
        run.push(row);
        put("run.csv", run)?;
        if let (Some(history), Some(metrics)) = (&self.history, self.result.metrics()) {
            put("history.csv", history_csv(history))?;
            put("epochs.csv", epochs_csv(history))?;
            put("margin_curve.csv", curve_csv(&metrics.margin_curve))?;
        }
        if let Some(net) = &self.network {
            let path = dir.join("model.json");
            io::save_network(&path, net)?;
            written.push(path);
        }
        Ok(written)
    }
}
