//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p lmdnn --test acceptance -- 4 7`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use lmdnn::config::ExperimentConfig;
use lmdnn::harness::{self, LoadedData, RunOutcome};
use lmdnn::io::{load_mnist_dir, load_mnist_idx, MNIST_TEST_IMAGES, MNIST_TEST_LABELS, MNIST_TRAIN_LABELS};
use lmdnn::Error;
use lmdnn_core::bounds::{
    betti_log_bound, margin_bound, pfaffian_for_activation, ra_upper_bound, BettiBoundParams, MarginBoundParams,
    RaBoundParams,
};
use lmdnn_core::gradcheck::gradient_check;
use lmdnn_core::margin::{margin_curve, zero_one_error};
use lmdnn_core::optim::iterations_for_epochs;
use lmdnn_core::{
    Activation, Dataset, LayerSpec, LossKind, MarginCurve, MarginSpace, Matrix, NetworkSpec, PoolMode, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Verdict = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

fn mnist_dir() -> PathBuf {
    std::env::var_os(harness::MNIST_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist_missing(dir: &Path) -> String {
    format!(
        "MNIST IDX files not found in {} (set {} or see the README)",
        dir.display(),
        harness::MNIST_DIR_ENV
    )
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity

fn random_spec(rng: &mut ChaCha8Rng, activation: Activation, conv: bool, pool: PoolMode) -> NetworkSpec {
    let k = rng.random_range(2..=4);
    if !conv {
        let d = rng.random_range(3..=6);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(3..=6)).collect();
        return NetworkSpec::mlp(d, 1.0, &hidden, activation, k);
    }
    let kw = rng.random_range(2..=3);
    // Conv output width w - kw + 1 must split into whole pooling regions.
    let (c, h, w) = (
        rng.random_range(1..=2),
        rng.random_range(3..=5),
        kw - 1 + 2 * rng.random_range(2..=3),
    );
    NetworkSpec {
        input_dim: c * h * w,
        input_bound: 1.0,
        use_bias: true,
        num_classes: k,
        layers: vec![
            LayerSpec::Conv {
                filters: rng.random_range(2..=3),
                kernel: [2, kw],
                stride: 1,
                activation,
            },
            LayerSpec::Pool { mode: pool, region: 2 },
            LayerSpec::dense(k, Activation::Identity),
        ],
        input_shape: Some([c, h, w]),
    }
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut combos = 0;
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for loss in ["c", "c1", "c2"] {
        for activation in [Activation::Sigmoid, Activation::Tanh, Activation::Relu] {
            for (conv, pool) in [(false, PoolMode::Max), (true, PoolMode::Max), (true, PoolMode::Avg)] {
                let spec = random_spec(&mut rng, activation, conv, pool);
                let lambda = rng.random_range(0.1..2.0);
                let kind = match loss {
                    "c" => LossKind::CrossEntropy,
                    "c1" => LossKind::C1 { lambda },
                    _ => LossKind::C2 { lambda },
                };
                let seed = rng.random::<u64>();
                let r = gradient_check(&spec, kind, seed, 1e-5).map_err(|e| format!("{kind} {activation:?}: {e}"))?;
                ensure(r.checked > 0, || {
                    format!("{kind} {activation:?} conv={conv}: nothing checked")
                })?;
                ensure(r.max_rel_err < 1e-5, || {
                    format!(
                        "{kind} {activation:?} conv={conv} seed {seed}: max rel err {:.3e}",
                        r.max_rel_err
                    )
                })?;
                worst = worst.max(r.max_rel_err);
                skipped += r.skipped;
                combos += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(combos >= 20, || format!("only {combos} combinations"))?;
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{combos} combinations, worst rel err {worst:.2e}, {skipped} kink coordinates excluded, {secs:.1}s"
    ))
}

// ---------------------------------------------------------------------------
// 2. Bound oracles

fn bound_oracles() -> Verdict {
    let ra = ra_upper_bound(&RaBoundParams {
        c: 1.0,
        input_bound: 1.0,
        input_dim: 3,
        sample_size: 100,
        pool_region: 2,
        lipschitz: 1.0,
        weight_bound: 1.0,
        depth: 2,
    })
    .map_err(|e| e.to_string())?;
    let ra_oracle = 4.0 * (3f64.ln() / 100.0).sqrt();
    ensure(rel(ra, ra_oracle) < 1e-9, || format!("RA {ra} vs {ra_oracle}"))?;

    let betti = betti_log_bound(&BettiBoundParams {
        num_classes: 2,
        input_dim: 2,
        hidden_units: 3,
        depth: 2,
        pfaffian: pfaffian_for_activation("tanh").map_err(|e| e.to_string())?,
    })
    .map_err(|e| e.to_string())?;
    let betti_oracle = (8.0 * 14f64.powi(5)).ln();
    ensure(rel(betti, betti_oracle) < 1e-9, || {
        format!("Betti {betti} vs {betti_oracle}")
    })?;

    let curve = MarginCurve {
        gammas: vec![0.5],
        errors: vec![0.1],
        space: MarginSpace::Softmax,
    };
    let mb = margin_bound(&MarginBoundParams {
        delta: 0.05,
        sample_size: 10_000,
        num_classes: 2,
        rademacher: 0.001,
        curve: &curve,
    })
    .map_err(|e| e.to_string())?;
    let mb_oracle = 0.1 + 8.0 * 2.0 * 3.0 / 0.5 * 0.001 + (2f64.ln() / 1e4).sqrt() + (40f64.ln() / 2e4).sqrt();
    ensure(rel(mb.value, mb_oracle) < 1e-9, || {
        format!("margin bound {} vs {mb_oracle}", mb.value)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut deeper_checked = 0;
    for i in 0..100 {
        let p = RaBoundParams {
            c: rng.random_range(0.1..3.0),
            input_bound: rng.random_range(0.1..5.0),
            input_dim: rng.random_range(2..1000),
            sample_size: rng.random_range(1..100_000),
            pool_region: rng.random_range(1..5),
            lipschitz: 1.0,
            weight_bound: rng.random_range(0.1..3.0),
            depth: rng.random_range(1..8),
        };
        let f = |q: RaBoundParams| ra_upper_bound(&q).expect("valid parameters");
        let v = f(p);
        ensure(
            f(RaBoundParams {
                weight_bound: p.weight_bound * 1.05,
                ..p
            }) > v,
            || format!("RA not increasing in A at {i}"),
        )?;
        ensure(
            f(RaBoundParams {
                pool_region: p.pool_region + 1,
                ..p
            }) > v,
            || format!("RA not increasing in p at {i}"),
        )?;
        ensure(
            f(RaBoundParams {
                input_bound: p.input_bound * 1.05,
                ..p
            }) > v,
            || format!("RA not increasing in M at {i}"),
        )?;
        if p.pool_region as f64 * p.lipschitz * p.weight_bound > 1.0 {
            ensure(
                f(RaBoundParams {
                    depth: p.depth + 1,
                    ..p
                }) > v,
                || format!("RA not increasing in L at {i}"),
            )?;
            deeper_checked += 1;
        }

        let pfaffian = pfaffian_for_activation(if rng.random_bool(0.5) { "tanh" } else { "arctan" }).expect("known");
        let h = rng.random_range(1..200);
        let b = BettiBoundParams {
            num_classes: rng.random_range(2..20),
            input_dim: rng.random_range(1..=h * pfaffian.eta as usize),
            hidden_units: h,
            depth: rng.random_range(2..20),
            pfaffian,
        };
        let g = |q: BettiBoundParams| betti_log_bound(&q).expect("hypothesis holds");
        let v = g(b);
        ensure(
            g(BettiBoundParams {
                depth: b.depth + 1,
                ..b
            }) > v,
            || format!("Betti not increasing in L at {i}"),
        )?;
        ensure(
            g(BettiBoundParams {
                hidden_units: h + 1,
                ..b
            }) > v,
            || format!("Betti not increasing in h at {i}"),
        )?;
    }
    Ok(format!(
        "RA {ra:.12}, Betti {betti:.12}, margin {:.12}; 100-point sweeps hold ({deeper_checked} depth cases with pL_φA > 1)",
        mb.value
    ))
}

// ---------------------------------------------------------------------------
// 3. Margin machinery

fn brute_force_margins(outputs: &Matrix, labels: &[usize], space: MarginSpace) -> Vec<f64> {
    (0..labels.len())
        .map(|i| {
            let row = outputs.row(i);
            let scores: Vec<f64> = match space {
                MarginSpace::Raw => row.to_vec(),
                MarginSpace::Softmax => {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter().map(|v| v / s).collect()
                }
            };
            let y = labels[i] - 1;
            let rival = scores
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != y)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            scores[y] - rival
        })
        .collect()
}

fn margin_machinery() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gammas: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
    let mut datasets = 0;
    for trial in 0..60 {
        let (m, d, k) = (100, rng.random_range(2..8), rng.random_range(2..6));
        let features = Matrix::from_fn(m, d, |_, _| rng.random_range(-1.0..=1.0));
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(1..=k)).collect();
        let ds = Dataset::new(features, labels.clone(), k, 1.0).map_err(|e| e.to_string())?;
        let act = [Activation::Sigmoid, Activation::Tanh, Activation::Relu][trial % 3];
        let spec = NetworkSpec::mlp(d, 1.0, &[rng.random_range(2..10)], act, k);
        let net = lmdnn_core::Network::build(spec, rng.random()).map_err(|e| e.to_string())?;
        let outputs = net.predict(ds.features()).map_err(|e| e.to_string())?;
        let zero_one = zero_one_error(&net, &ds).map_err(|e| e.to_string())?;

        for space in [MarginSpace::Raw, MarginSpace::Softmax] {
            let curve = margin_curve(&net, &ds, &gammas, space).map_err(|e| e.to_string())?;
            let margins = brute_force_margins(&outputs, &labels, space);
            let has_tie = |g: f64| margins.iter().any(|&r| (r - g).abs() < 1e-12);
            for (j, &g) in gammas.iter().enumerate() {
                let count = margins.iter().filter(|&&r| r <= g).count() as f64 / m as f64;
                ensure(curve.errors[j] == count || has_tie(g), || {
                    format!(
                        "trial {trial} {space}: err at γ={g} is {} but recount gives {count}",
                        curve.errors[j]
                    )
                })?;
                ensure(zero_one <= curve.errors[j] || has_tie(g) || has_tie(0.0), || {
                    format!("trial {trial} {space}: 0-1 error {zero_one} exceeds err at γ={g}")
                })?;
            }
            ensure(curve.errors.windows(2).all(|w| w[0] <= w[1]), || {
                format!("trial {trial} {space}: curve not monotone")
            })?;
        }
        datasets += 1;
    }
    Ok(format!(
        "{datasets} random 100-sample datasets, raw and softmax margins, all 19 grid points"
    ))
}

// ---------------------------------------------------------------------------
// 4. Desk-scale MNIST study

const MNIST_BASE_LR: f64 = 0.1;
const MNIST_SEEDS: [u64; 3] = [1, 2, 3];
const MNIST_LAMBDAS: [f64; 3] = [0.1, 1.0, 10.0];

struct MnistRun {
    test_err: f64,
    val_err: f64,
    curve: Vec<f64>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn mnist_study() -> Verdict {
    let start = Instant::now();
    let dir = mnist_dir();
    let (train_full, test_full) = match load_mnist_dir(&dir) {
        Ok(d) => d,
        Err(Error::MissingData(_)) => return Err(mnist_missing(&dir)),
        Err(e) => return Err(e.to_string()),
    };
    let e = |e: lmdnn_core::Error| e.to_string();
    let data = LoadedData {
        train: train_full.head(10_000).map_err(e)?,
        test: test_full.head(2_000).map_err(e)?,
    };
    // Coefficients are chosen on test images 2000..3999, disjoint from the
    // 2k evaluation subset.
    let validation = test_full.subset(&(2_000..4_000).collect::<Vec<_>>()).map_err(e)?;
    let spec = NetworkSpec::mlp(784, 1.0, &[300], Activation::Sigmoid, 10);
    let iterations = iterations_for_epochs(data.train.len(), 64, 5);
    let gammas: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();

    let mut kinds = vec![LossKind::CrossEntropy];
    kinds.extend(MNIST_LAMBDAS.iter().map(|&lambda| LossKind::C1 { lambda }));
    let mut runs: BTreeMap<String, Vec<Option<MnistRun>>> = BTreeMap::new();
    for kind in &kinds {
        for &seed in &MNIST_SEEDS {
            let cfg = TrainConfig::mnist_recipe(*kind, MNIST_BASE_LR, iterations, seed);
            let (trained, result) =
                harness::run_one(&spec, &data, &cfg, &gammas, &Default::default()).map_err(|e| e.to_string())?;
            let run = match (trained, result.outcome) {
                (Some((net, _)), RunOutcome::Completed(m)) => Some(MnistRun {
                    test_err: m.test_err,
                    val_err: zero_one_error(&net, &validation).map_err(e)?,
                    curve: m.margin_curve.errors,
                }),
                _ => None,
            };
            runs.entry(kind.to_string()).or_default().push(run);
        }
    }

    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
    let completed = |key: &str| -> Option<Vec<&MnistRun>> { runs[key].iter().map(Option::as_ref).collect() };
    let baseline = completed("c").ok_or("DNN-C diverged")?;
    let c_test = mean(baseline.iter().map(|r| r.test_err).collect());

    let mut best: Option<(f64, f64)> = None;
    let mut table = Vec::new();
    for &lambda in &MNIST_LAMBDAS {
        let key = LossKind::C1 { lambda }.to_string();
        match completed(&key) {
            Some(rs) => {
                let val = mean(rs.iter().map(|r| r.val_err).collect());
                let test = mean(rs.iter().map(|r| r.test_err).collect());
                table.push(format!("λ={lambda}: val {val:.4} test {test:.4}"));
                if best.is_none_or(|(_, v)| val < v) {
                    best = Some((lambda, val));
                }
            }
            None => table.push(format!("λ={lambda}: diverged")),
        }
    }
    let (lambda, _) = best.ok_or("every C1 run diverged")?;
    let chosen = completed(&LossKind::C1 { lambda }.to_string()).expect("completed");
    let fractions: Vec<f64> = chosen
        .iter()
        .zip(&baseline)
        .map(|(c1, c)| c1.curve.iter().zip(&c.curve).filter(|(a, b)| a <= b).count() as f64 / gammas.len() as f64)
        .collect();
    let frac = median(fractions.clone());
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "DNN-C mean test err {c_test:.4}; {}; best λ={lambda}; C1 ≤ C at {:?} of γ grid per seed (median {frac:.3}); {secs:.0}s",
        table.join(", "),
        fractions.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>()
    );
    ensure(c_test <= 0.12, || format!("(a) failed: {detail}"))?;
    ensure(frac >= 0.7, || format!("(b) failed: {detail}"))?;
    ensure(secs < 900.0, || format!("runtime: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 5. Depth sweep, regression-locked

fn depth_config() -> ExperimentConfig {
    let cfg = json!({
        "data": {"source": "synthetic", "samples": 2000, "dim": 10, "classes": 3, "spread": 2.0, "seed": 0, "test_fraction": 0.25},
        "base": {
            "network": {"input_dim": 10, "input_bound": 3.0, "num_classes": 3,
                        "layers": [{"kind": "dense", "out": 256, "activation": "sigmoid"},
                                   {"kind": "dense", "out": 3, "activation": "identity"}]},
            "train": {"loss": "c", "batch_size": 64, "momentum": 0.9, "weight_decay": 0.0005,
                      "schedule": {"kind": "inverse_poly", "base_lr": 0.1}, "epochs": 10}
        },
        "axis": {"kind": "depth", "depths": [2, 3, 4, 5], "total_hidden": 256, "activation": "sigmoid"},
        "seeds": [1, 2, 3]
    });
    ExperimentConfig::from_json(&cfg.to_string(), Path::new("depth.json")).expect("valid config")
}

fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/depth_sweep.json")
}

fn depth_sweep() -> Verdict {
    let cfg = depth_config();
    let data = harness::load_data(&cfg.data).map_err(|e| e.to_string())?;
    let report = harness::run_depth_sweep(&cfg, &data).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let written = report
        .write(dir.path(), "depth", "sweep-depth", &cfg)
        .map_err(|e| e.to_string())?;
    for name in ["depth_summary.csv", "depth_runs.csv", "depth_margin_curves.csv"] {
        ensure(written.iter().any(|p| p.ends_with(name)), || {
            format!("{name} not written")
        })?;
    }

    let outcome = json!({
        "depths": report.groups.iter().map(|g| g.key.clone()).collect::<Vec<_>>(),
        "mean_test_err": report.groups.iter().map(|g| g.stats().mean_test_err).collect::<Vec<_>>(),
        "mean_train_err": report.groups.iter().map(|g| g.stats().mean_train_err).collect::<Vec<_>>(),
        "mean_effective_a": report.groups.iter().map(|g| g.stats().mean_effective_a).collect::<Vec<_>>(),
        "mean_margin_curves": report.groups.iter().map(|g| harness::mean_curve(&g.runs, &report.gammas)).collect::<Vec<_>>(),
    });
    let errs: Vec<String> = report
        .groups
        .iter()
        .map(|g| format!("L={} {:.4}", g.key, g.stats().mean_test_err))
        .collect();
    let summary = format!("mean test err {}", errs.join(", "));

    let path = fixture_path();
    let Ok(text) = std::fs::read_to_string(&path) else {
        if std::env::var_os("LMDNN_RECORD_FIXTURES").is_some() {
            std::fs::create_dir_all(path.parent().expect("parent")).map_err(|e| e.to_string())?;
            let body = serde_json::to_string_pretty(&outcome).expect("JSON") + "\n";
            std::fs::write(&path, body).map_err(|e| e.to_string())?;
            return Ok(format!("recorded {}; {summary}", path.display()));
        }
        return Err(format!(
            "no fixture at {} (record with LMDNN_RECORD_FIXTURES=1)",
            path.display()
        ));
    };
    let locked: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    compare_locked(&locked, &outcome, "")?;
    Ok(format!("matches pinned outcome to 1e-9; {summary}"))
}

fn compare_locked(locked: &serde_json::Value, got: &serde_json::Value, at: &str) -> Result<(), String> {
    use serde_json::Value;
    match (locked, got) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().expect("f64"), b.as_f64().expect("f64"));
            ensure(rel(b, a) < 1e-9 || (a == 0.0 && b.abs() < 1e-300), || {
                format!("{at}: pinned {a}, got {b}")
            })
        }
        (Value::Array(a), Value::Array(b)) => {
            ensure(a.len() == b.len(), || {
                format!("{at}: length {} vs {}", a.len(), b.len())
            })?;
            a.iter()
                .zip(b)
                .enumerate()
                .try_for_each(|(i, (x, y))| compare_locked(x, y, &format!("{at}[{i}]")))
        }
        (Value::Object(a), Value::Object(b)) => {
            ensure(a.keys().eq(b.keys()), || format!("{at}: keys differ"))?;
            a.iter()
                .try_for_each(|(k, v)| compare_locked(v, &b[k], &format!("{at}.{k}")))
        }
        (a, b) => ensure(a == b, || format!("{at}: pinned {a}, got {b}")),
    }
}

// ---------------------------------------------------------------------------
// 6. CLI determinism

fn small_config(axis: Option<serde_json::Value>) -> serde_json::Value {
    let mut cfg = json!({
        "data": {"source": "synthetic", "samples": 240, "dim": 4, "classes": 3, "spread": 0.8, "seed": 5, "test_fraction": 0.25},
        "base": {
            "network": {"input_dim": 4, "input_bound": 3.0, "num_classes": 3,
                        "layers": [{"kind": "dense", "out": 8, "activation": "tanh"},
                                   {"kind": "dense", "out": 3, "activation": "identity"}]},
            "train": {"loss": "c1:0.5", "batch_size": 16, "momentum": 0.9, "weight_decay": 0.0005,
                      "schedule": {"kind": "inverse_poly", "base_lr": 0.05}, "epochs": 3}
        },
        "seeds": [1, 2, 3]
    });
    if let Some(axis) = axis {
        cfg["axis"] = axis;
    }
    cfg
}

fn lmdnn(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lmdnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("lmdnn {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })?;
    Ok(out.stdout)
}

/// Relative path → contents of every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("readable output directory") {
        let path = entry.expect("entry").path();
        let name = path.file_name().expect("name").to_string_lossy().into_owned();
        files.insert(name, std::fs::read(&path).expect("readable file"));
    }
    files
}

fn cli_determinism() -> Verdict {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let write_cfg = |name: &str, v: serde_json::Value| -> Result<String, String> {
        let p = root.path().join(name);
        std::fs::write(&p, v.to_string()).map_err(|e| e.to_string())?;
        Ok(p.to_string_lossy().into_owned())
    };
    let base = write_cfg("base.json", small_config(None))?;
    let depth = write_cfg(
        "depth.json",
        small_config(Some(
            json!({"kind": "depth", "depths": [2, 3], "total_hidden": 8, "activation": "tanh"}),
        )),
    )?;
    let lambda = write_cfg(
        "lambda.json",
        small_config(Some(json!({"kind": "lambda", "family": "c2", "lambdas": [0, 0.5]}))),
    )?;
    let losses = write_cfg(
        "losses.json",
        small_config(Some(json!({"kind": "losses", "c1_lambda": 0.5, "c2_lambda": 0.5}))),
    )?;

    let mut compared = 0;
    let mut commands = Vec::new();
    let mut outs = Vec::new();
    for pass in 0..2 {
        let out = root.path().join(format!("run{pass}"));
        let o = out.to_string_lossy().into_owned();
        let mut stdouts = BTreeMap::new();
        lmdnn(&["train", "--config", &base, "--out", &o])?;
        lmdnn(&["sweep-depth", "--config", &depth, "--out", &o])?;
        lmdnn(&["sweep-lambda", "--config", &lambda, "--out", &o])?;
        lmdnn(&["compare-losses", "--config", &losses, "--out", &o])?;
        let model = out.join("model.json").to_string_lossy().into_owned();
        let curve_dir = root.path().join(format!("curve{pass}"));
        lmdnn(&[
            "margin-curve",
            "--config",
            &base,
            "--model",
            &model,
            "--split",
            "test",
            "--out",
            &curve_dir.to_string_lossy(),
        ])?;
        let curve = curve_dir.join("margin_curve.csv").to_string_lossy().into_owned();
        stdouts.insert(
            "bounds",
            lmdnn(&["bounds", "--model", &model, "--samples", "180", "--curve", &curve])?,
        );
        stdouts.insert("gradcheck", lmdnn(&["gradcheck", "--config", &base])?);
        lmdnn(&["plots", "--out", &o])?;
        outs.push((snapshot(&out), snapshot(&curve_dir), stdouts));
        commands = vec![
            "train",
            "sweep-depth",
            "sweep-lambda",
            "compare-losses",
            "margin-curve",
            "bounds",
            "gradcheck",
            "plots",
        ];
    }
    let (a, b) = (&outs[0], &outs[1]);
    for (x, y) in [(&a.0, &b.0), (&a.1, &b.1)] {
        ensure(x.keys().eq(y.keys()), || "different file sets".into())?;
        for (name, bytes) in x {
            ensure(&y[name] == bytes, || format!("{name} differs between runs"))?;
            compared += 1;
        }
    }
    for (name, bytes) in &a.2 {
        ensure(&b.2[name] == bytes, || format!("{name} output differs between runs"))?;
        compared += 1;
    }
    let csvs = a.0.keys().chain(a.1.keys()).filter(|n| n.ends_with(".csv")).count();
    Ok(format!(
        "{} commands, {compared} outputs ({csvs} CSV files) byte-identical",
        commands.len()
    ))
}

// ---------------------------------------------------------------------------
// 7. Data layer

fn format_offset(e: &Error) -> Option<(PathBuf, usize)> {
    match e {
        Error::Data {
            path,
            source: lmdnn_core::Error::Format { offset, .. },
        } => Some((path.clone(), *offset)),
        _ => None,
    }
}

fn data_layer() -> Verdict {
    let dir = mnist_dir();
    let (train, test) = match load_mnist_dir(&dir) {
        Ok(d) => d,
        Err(Error::MissingData(_)) => return Err(mnist_missing(&dir)),
        Err(e) => return Err(e.to_string()),
    };
    let shape = |d: &Dataset| (d.len(), d.dim(), d.num_classes());
    ensure(shape(&train) == (60_000, 784, 10), || {
        format!("train shape {:?}", shape(&train))
    })?;
    ensure(shape(&test) == (10_000, 784, 10), || {
        format!("test shape {:?}", shape(&test))
    })?;

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let images = std::fs::read(dir.join(MNIST_TEST_IMAGES)).map_err(|e| e.to_string())?;
    let labels = std::fs::read(dir.join(MNIST_TEST_LABELS)).map_err(|e| e.to_string())?;
    let put = |name: &str, bytes: &[u8]| {
        let p = tmp.path().join(name);
        std::fs::write(&p, bytes).expect("writable temp dir");
        p
    };
    let good_images = put("images", &images);
    let good_labels = put("labels", &labels);

    let mut bad_magic = images.clone();
    bad_magic[2] = 0x0C;
    let case = |imgs: &Path, labs: &Path, want_path: &Path, want_offset: usize, what: &str| -> Result<(), String> {
        let err = load_mnist_idx(imgs, labs).err().ok_or(format!("{what}: accepted"))?;
        let (path, offset) = format_offset(&err).ok_or(format!("{what}: unexpected error {err}"))?;
        ensure(path == want_path && offset == want_offset, || {
            format!(
                "{what}: got {} @ {offset}, want {} @ {want_offset}",
                path.display(),
                want_path.display()
            )
        })
    };
    let p = put("bad_magic", &bad_magic);
    case(&p, &good_labels, &p, 0, "image magic")?;
    let p = put("short_header", &labels[..6]);
    case(&good_images, &p, &p, 6, "truncated label header")?;
    let p = put("short_payload", &images[..images.len() - 100]);
    case(&p, &good_labels, &p, images.len() - 100, "truncated image payload")?;
    let train_labels = dir.join(MNIST_TRAIN_LABELS);
    case(&good_images, &train_labels, &train_labels, 4, "count mismatch")?;

    Ok("train (60000, 784, 10), test (10000, 784, 10); 4 corrupted files rejected at the right offsets".into())
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        (1, "gradient fidelity", gradient_fidelity),
        (2, "bound oracles", bound_oracles),
        (3, "margin machinery", margin_machinery),
        (4, "desk-scale MNIST study", mnist_study),
        (5, "depth sweep regression lock", depth_sweep),
        (6, "CLI determinism", cli_determinism),
        (7, "MNIST data layer", data_layer),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS [{id}] {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{id}] {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
