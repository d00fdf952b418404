use std::path::Path;

use lmdnn::config::{BoundSettings, DataConfig, ExperimentConfig};
use lmdnn::harness::{self, compare_losses, load_data, run_lambda_sweep, run_one, stats, RunOutcome};
use lmdnn::io::csv_body;
use lmdnn::Error;
use lmdnn_core::{Activation, LossKind, NetworkSpec, Schedule, TrainConfig};
use serde_json::json;

fn config(axis: serde_json::Value, seeds: &[u64]) -> ExperimentConfig {
    let v = json!({
        "data": {"source": "synthetic", "samples": 200, "dim": 3, "classes": 3, "spread": 0.6, "seed": 9, "test_fraction": 0.25},
        "base": {
            "network": {"input_dim": 3, "input_bound": 3.0, "num_classes": 3,
                        "layers": [{"kind": "dense", "out": 6, "activation": "tanh"},
                                   {"kind": "dense", "out": 3, "activation": "identity"}]},
            "train": {"loss": "c", "batch_size": 16, "momentum": 0.9, "weight_decay": 0.0005,
                      "schedule": {"kind": "inverse_poly", "base_lr": 0.05}, "epochs": 2}
        },
        "axis": axis,
        "seeds": seeds
    });
    ExperimentConfig::from_json(&v.to_string(), Path::new("t.json")).unwrap()
}

#[test]
fn synthetic_data_is_split_by_test_fraction() {
    let cfg = config(json!({"kind": "lambda", "family": "c1", "lambdas": [0]}), &[1]);
    let data = load_data(&cfg.data).unwrap();
    assert_eq!((data.train.len(), data.test.len()), (150, 50));
    assert_eq!(data, load_data(&cfg.data).unwrap());
}

#[test]
fn missing_mnist_directory_is_a_data_error() {
    let cfg = DataConfig::Mnist {
        dir: Some("/nonexistent/mnist".into()),
        train_samples: None,
        test_samples: None,
    };
    let err = load_data(&cfg).unwrap_err();
    assert!(matches!(err, Error::MissingData(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn lambda_sweep_marks_the_baseline() {
    let cfg = config(json!({"kind": "lambda", "family": "c2", "lambdas": [0, 0.5]}), &[1, 2]);
    let data = load_data(&cfg.data).unwrap();
    let report = run_lambda_sweep(&cfg, &data).unwrap();
    assert_eq!(report.groups.len(), 2);
    assert_eq!(report.groups[0].extra, vec![("baseline".to_string(), "1".to_string())]);
    assert_eq!(report.groups[1].loss, LossKind::C2 { lambda: 0.5 });

    // λ = 0 trains exactly like plain cross entropy.
    let train = cfg.base.train.resolve(1, data.train.len());
    let (_, plain) = run_one(&cfg.base.network, &data, &train, &cfg.gammas, &cfg.bounds).unwrap();
    assert_eq!(report.groups[0].runs[0].metrics(), plain.metrics());

    let summary = report.summary_csv().render();
    let mut lines = csv_body(&summary);
    assert_eq!(
        lines.next().unwrap(),
        "lambda,baseline,runs,completed,mean_test_err,min_test_err,std_test_err,mean_train_err,mean_effective_a,mean_ra_bound,mean_margin_bound"
    );
    assert!(lines.next().unwrap().starts_with("0,1,2,2,"));
    let curves = report.curves_csv().render();
    assert_eq!(csv_body(&curves).next().unwrap(), "gamma,lambda_0,lambda_0.5");
    assert_eq!(csv_body(&curves).count(), 20);
}

#[test]
fn compare_losses_needs_three_seeds() {
    let axis = json!({"kind": "losses", "c1_lambda": 0.5, "c2_lambda": 0.5});
    let few = config(axis.clone(), &[1, 2]);
    let data = load_data(&few.data).unwrap();
    assert!(matches!(compare_losses(&few, &data), Err(Error::Config(_))));

    let cfg = config(axis, &[1, 2, 3]);
    let report = compare_losses(&cfg, &data).unwrap();
    let keys: Vec<&str> = report.groups.iter().map(|g| g.key.as_str()).collect();
    assert_eq!(keys, ["c", "c1", "c2"]);
    assert!(report.groups.iter().all(|g| g.stats().completed == 3));
}

#[test]
fn depth_sweep_splits_hidden_units() {
    let cfg = config(
        json!({"kind": "depth", "depths": [2, 4], "total_hidden": 12, "activation": "sigmoid"}),
        &[1],
    );
    let data = load_data(&cfg.data).unwrap();
    let report = harness::run_depth_sweep(&cfg, &data).unwrap();
    let units: Vec<&str> = report.groups.iter().map(|g| g.extra[0].1.as_str()).collect();
    assert_eq!(units, ["12", "4"]);
    let deep = &report.groups[1].runs[0].network;
    assert_eq!(deep.depth(), 4);
    assert!(deep.layers[..3].iter().all(|l| l.activation() == Activation::Sigmoid));
}

#[test]
fn divergence_is_recorded_per_run() {
    let cfg = config(json!({"kind": "lambda", "family": "c1", "lambdas": [0]}), &[1]);
    let data = load_data(&cfg.data).unwrap();
    let mut train = TrainConfig::mnist_recipe(LossKind::CrossEntropy, 1e300, 20, 1);
    train.schedule = Schedule::Constant { lr: 1e300 };
    let (net, result) = run_one(&cfg.base.network, &data, &train, &cfg.gammas, &BoundSettings::default()).unwrap();
    assert!(net.is_none());
    assert!(matches!(result.outcome, RunOutcome::Diverged { .. }));
    let s = stats(&[result]);
    assert_eq!((s.runs, s.completed), (1, 0));
    assert!(s.mean_test_err.is_nan());
}

#[test]
fn incompatible_network_is_a_config_error() {
    let cfg = config(json!({"kind": "lambda", "family": "c1", "lambdas": [0]}), &[1]);
    let data = load_data(&cfg.data).unwrap();
    let spec = NetworkSpec::mlp(5, 1.0, &[4], Activation::Tanh, 3);
    let train = cfg.base.train.resolve(1, data.train.len());
    let err = run_one(&spec, &data, &train, &cfg.gammas, &cfg.bounds).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn sample_statistics() {
    let cfg = config(json!({"kind": "lambda", "family": "c1", "lambdas": [0]}), &[1, 2, 3]);
    let data = load_data(&cfg.data).unwrap();
    let runs: Vec<_> = cfg
        .seeds
        .iter()
        .map(|&s| {
            let train = cfg.base.train.resolve(s, data.train.len());
            run_one(&cfg.base.network, &data, &train, &cfg.gammas, &cfg.bounds)
                .unwrap()
                .1
        })
        .collect();
    let errs: Vec<f64> = runs.iter().map(|r| r.metrics().unwrap().test_err).collect();
    let mean = errs.iter().sum::<f64>() / 3.0;
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 2.0;
    let s = stats(&runs);
    assert!((s.mean_test_err - mean).abs() < 1e-15);
    assert!((s.std_test_err - var.sqrt()).abs() < 1e-15);
    assert_eq!(s.min_test_err, errs.iter().cloned().fold(f64::INFINITY, f64::min));
}
