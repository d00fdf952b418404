use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lmdnn::config::ExperimentConfig;
use lmdnn::harness::{self, LoadedData};
use lmdnn::io::{self, config_echo, curve_csv};
use lmdnn::{plots, Error, Result};
use lmdnn_core::bounds::{
    betti_log_bound, margin_bound, pfaffian_for_activation, ra_upper_bound, BettiBoundParams, MarginBoundParams,
    RaBoundParams,
};
use lmdnn_core::gradcheck::gradient_check_in;
use lmdnn_core::margin::margin_curve;
use lmdnn_core::{LayerSpec, LossKind, MarginSpace};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "lmdnn",
    version,
    about = "Train and analyze margin-penalized neural networks"
)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Run with this single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding the MNIST IDX files.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its history, margin curve and weights.
    Train,
    /// Train fully connected networks of several depths.
    SweepDepth,
    /// Train with a penalized loss over a list of coefficients.
    SweepLambda,
    /// Compare cross entropy with both penalized losses.
    CompareLosses,
    /// Margin error curve of a saved model on the configured data.
    MarginCurve(MarginCurveArgs),
    /// Evaluate the capacity and margin bounds; prints JSON.
    Bounds(BoundsArgs),
    /// Finite-difference check of the configured network; prints JSON.
    Gradcheck(GradcheckArgs),
    /// Write gnuplot scripts for the CSV files in the output directory.
    Plots,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Softmax,
    Raw,
}

impl From<Space> for MarginSpace {
    fn from(s: Space) -> Self {
        match s {
            Space::Softmax => MarginSpace::Softmax,
            Space::Raw => MarginSpace::Raw,
        }
    }
}

#[derive(Args)]
struct MarginCurveArgs {
    /// Model written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    split: Split,
    #[arg(long, value_enum, default_value = "softmax")]
    space: Space,
}

#[derive(Args)]
struct BoundsArgs {
    /// Take d, M, L, p, A, K and the hidden width from a saved model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    input_bound: Option<f64>,
    #[arg(long)]
    input_dim: Option<usize>,
    /// Training sample size m.
    #[arg(long)]
    samples: usize,
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    #[arg(long)]
    weight_bound: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Total hidden units h.
    #[arg(long)]
    hidden_units: Option<usize>,
    /// Hidden activation for the Betti number bound (tanh or arctan).
    #[arg(long)]
    activation: Option<String>,
    /// Margin curve (`gamma,err` CSV) for the margin bound.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Loss to check (`c`, `c1:<λ>`, `c2:<λ>`); defaults to the configured one.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, value_enum, default_value = "softmax")]
    space: Space,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = &cli.data {
        cfg = cfg.with_data_dir(dir.clone());
    }
    Ok(cfg)
}

fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let data = harness::load_data(&cfg.data)?;
    log::info!("data: {} train / {} test samples", data.train.len(), data.test.len());
    Ok(data)
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train => {
            let cfg = load_config(cli)?;
            let data = load_data(&cfg)?;
            let output = harness::run_train(&cfg, &data)?;
            report(&output.write(&cli.out, &cfg)?);
            if let harness::RunOutcome::Diverged { iteration, what } = output.result.outcome {
                return Err(lmdnn_core::Error::Divergence { iteration, what }.into());
            }
        }
        Command::SweepDepth => {
            let cfg = load_config(cli)?;
            let data = load_data(&cfg)?;
            let sweep = harness::run_depth_sweep(&cfg, &data)?;
            report(&sweep.write(&cli.out, "depth", "sweep-depth", &cfg)?);
        }
        Command::SweepLambda => {
            let cfg = load_config(cli)?;
            let data = load_data(&cfg)?;
            let sweep = harness::run_lambda_sweep(&cfg, &data)?;
            report(&sweep.write(&cli.out, "lambda", "sweep-lambda", &cfg)?);
        }
        Command::CompareLosses => {
            let cfg = load_config(cli)?;
            let data = load_data(&cfg)?;
            let sweep = harness::compare_losses(&cfg, &data)?;
            report(&sweep.write(&cli.out, "losses", "compare-losses", &cfg)?);
        }
        Command::MarginCurve(args) => {
            let cfg = load_config(cli)?;
            let net = io::load_network(&args.model)?;
            let data = load_data(&cfg)?;
            let ds = match args.split {
                Split::Train => &data.train,
                Split::Test => &data.test,
            };
            let curve = margin_curve(&net, ds, &cfg.gammas, args.space.into())?;
            let path = cli.out.join("margin_curve.csv");
            curve_csv(&curve)
                .with_preamble(config_echo("margin-curve", &cfg))
                .write(&path)?;
            report(&[path]);
        }
        Command::Bounds(args) => bounds(args)?,
        Command::Gradcheck(args) => {
            let cfg = load_config(cli)?;
            let kind = args.loss.unwrap_or(cfg.base.train.loss);
            let seed = cli.seed.unwrap_or(cfg.seeds[0]);
            let report = gradient_check_in(&cfg.base.network, kind, args.space.into(), seed, args.step)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Plots => report(&plots::emit_plots(&cli.out)?),
    }
    Ok(())
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("bounds: --{flag} is required without --model")))
}

fn bounds(args: &BoundsArgs) -> Result<()> {
    let model = args.model.as_deref().map(io::load_network).transpose()?;
    let spec = model.as_ref().map(|n| n.spec());
    let hidden_from_model = spec.map(|s| {
        s.layers[..s.layers.len() - 1]
            .iter()
            .map(|l| match l {
                LayerSpec::Dense { out, .. } => *out,
                _ => 0,
            })
            .sum::<usize>()
    });
    let activation_from_model = spec
        .and_then(|s| s.layers.first())
        .map(|l| l.activation().name().to_string());

    let input_dim = required(args.input_dim.or(spec.map(|s| s.input_dim)), "input-dim")?;
    let depth = required(args.depth.or(spec.map(|s| s.depth())), "depth")?;
    let ra = ra_upper_bound(&RaBoundParams {
        c: args.c,
        input_bound: required(args.input_bound.or(spec.map(|s| s.input_bound)), "input-bound")?,
        input_dim,
        sample_size: args.samples,
        pool_region: args.pool.or(spec.map(|s| s.max_pool_region())).unwrap_or(1),
        lipschitz: args.lipschitz,
        weight_bound: required(
            args.weight_bound.or(model.as_ref().map(|n| n.effective_weight_bound())),
            "weight-bound",
        )?,
        depth,
    })?;

    let classes = args.classes.or(spec.map(|s| s.num_classes));
    let activation = args.activation.clone().or(activation_from_model);
    let betti = match (classes, args.hidden_units.or(hidden_from_model), activation) {
        (Some(k), Some(h), Some(act)) => {
            let value = pfaffian_for_activation(&act).and_then(|pfaffian| {
                betti_log_bound(&BettiBoundParams {
                    num_classes: k,
                    input_dim,
                    hidden_units: h,
                    depth,
                    pfaffian,
                })
            });
            match value {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("betti bound not evaluated: {e}");
                    None
                }
            }
        }
        _ => None,
    };

    let mb = match &args.curve {
        Some(path) => {
            let curve = io::read_curve_csv(path, MarginSpace::Softmax)?;
            let k = classes.ok_or_else(|| Error::Config("bounds: --classes is required with --curve".into()))?;
            Some(margin_bound(&MarginBoundParams {
                delta: args.delta,
                sample_size: args.samples,
                num_classes: k,
                rademacher: ra,
                curve: &curve,
            })?)
        }
        None => None,
    };
    let out = json!({
        "ra_bound": ra,
        "betti_log_bound": betti,
        "margin_bound": mb.map(|b| b.value),
        "argmin_gamma": mb.map(|b| b.argmin_gamma),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("JSON value"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
