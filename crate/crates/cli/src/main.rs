//! `morphboost` command-line front end.
//!
//! Exit codes: 0 on success, 1 for data/model/runtime errors, 2 for usage
//! errors (unknown or missing flags, invalid hyperparameters).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use morphboost::bench::{self, SUITE_NAMES};
use morphboost::{
    fit, load_csv, load_feature_csv, load_model, predict, predict_proba, save_model, Dataset,
    FeatureMatrix, MorphBoostError, ProblemFingerprint, TargetColumn, TaskKind, TrainConfig,
};

#[derive(Parser)]
#[command(name = "morphboost", version, about = "Gradient boosting with a morphing split criterion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a CSV file and save it
    Train(TrainArgs),
    /// Write predictions for a CSV file
    Predict(PredictArgs),
    /// Print the dataset fingerprint as key=value lines
    Fingerprint(FingerprintArgs),
    /// Run the synthetic benchmark suite
    Bench(BenchArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Input CSV file
    #[arg(long)]
    data: PathBuf,
    /// Target column: a header name, or a 0-based index with --no-header
    #[arg(long)]
    target: String,
    /// The CSV has no header row
    #[arg(long)]
    no_header: bool,
}

impl InputArgs {
    fn load(&self) -> anyhow::Result<Dataset> {
        let target = target_column(&self.target, self.no_header);
        load_csv(&self.data, target, !self.no_header)
            .with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_l2: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda_l1: f64,
    #[arg(long, default_value_t = 0.1)]
    evolution_pressure: f64,
    /// Fixed fingerprint statistics and coarser threshold sampling (default)
    #[arg(long, overrides_with = "no_fast_mode")]
    fast_mode: bool,
    #[arg(long, overrides_with = "fast_mode")]
    no_fast_mode: bool,
    /// Warm-up plus cosine annealing learning rate (default)
    #[arg(long, overrides_with = "fixed_lr")]
    adaptive_lr: bool,
    #[arg(long, overrides_with = "adaptive_lr")]
    fixed_lr: bool,
    /// Override the fingerprint's tree depth
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_samples_leaf: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl ConfigArgs {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            n_iterations: self.iterations,
            base_learning_rate: self.learning_rate,
            lambda_l2: self.lambda_l2,
            lambda_l1: self.lambda_l1,
            evolution_pressure: self.evolution_pressure,
            fast_mode: !self.no_fast_mode,
            adaptive_lr: !self.fixed_lr,
            max_depth_override: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Where to write the model file
    #[arg(long)]
    out: PathBuf,
    /// Validation CSV with the same columns as --data
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// Stop after this many rounds without validation improvement
    #[arg(long, requires = "eval_data")]
    early_stopping: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Where to write the predictions CSV
    #[arg(long)]
    out: PathBuf,
    /// Add one probability column per class
    #[arg(long)]
    proba: bool,
    /// Target column in --data: dropped from the features and used to score
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    no_header: bool,
}

#[derive(Args)]
struct FingerprintArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Use the fixed fast-mode statistics (default)
    #[arg(long, overrides_with = "no_fast_mode")]
    fast_mode: bool,
    #[arg(long, overrides_with = "fast_mode")]
    no_fast_mode: bool,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset to run (repeatable); all six by default
    #[arg(long = "spec", value_parser = clap::builder::PossibleValuesParser::new(SUITE_NAMES))]
    specs: Vec<String>,
    /// Where to write the results CSV
    #[arg(long, default_value = "bench_results.csv")]
    out: PathBuf,
    /// Fill the timing columns of the CSV (they are left empty otherwise so
    /// the file is reproducible)
    #[arg(long)]
    with_timings: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

fn target_column(target: &str, no_header: bool) -> TargetColumn {
    match (no_header, target.parse::<usize>()) {
        (true, Ok(i)) => TargetColumn::Index(i),
        _ => TargetColumn::Name(target.to_string()),
    }
}

/// Writes `contents` next to `path` and renames it into place.
fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command().error(ErrorKind::InvalidValue, msg).exit()
}

fn checked_config(config: TrainConfig) -> TrainConfig {
    config.validated().unwrap_or_else(|e| usage_error(e))
}

fn feature_name(names: Option<&[String]>, j: usize) -> String {
    names
        .and_then(|n| n.get(j).cloned())
        .unwrap_or_else(|| format!("x{j}"))
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let config = checked_config(TrainConfig {
        early_stopping_rounds: args.early_stopping,
        ..args.config.to_config()
    });
    let train = args.input.load()?;
    let eval = match &args.eval_data {
        Some(path) => Some(
            load_csv(path, target_column(&args.input.target, args.input.no_header), !args.input.no_header)
                .with_context(|| format!("loading {}", path.display()))?,
        ),
        None => None,
    };
    let model = fit(&train, &config, eval.as_ref())?;
    save_model(&model, &args.out)?;

    println!("task={}", model.task.name());
    println!("iterations={}", model.n_iterations());
    if let Some(loss) = model.final_train_loss() {
        println!("final_train_loss={loss}");
    }
    if let Some(best) = model.best_iteration {
        println!("best_iteration={best}");
    }
    let mut ranked: Vec<(usize, f64)> = model.importance.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    println!("top_importance:");
    for (j, v) in ranked.into_iter().take(5) {
        println!("  {} {v:.6}", feature_name(model.feature_names.as_deref(), j));
    }
    println!("model={}", args.out.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> anyhow::Result<()> {
    let model = load_model(&args.model)?;
    if args.proba && model.task == TaskKind::Regression {
        return Err(MorphBoostError::Task(
            "--proba requires a classification model".into(),
        )
        .into());
    }
    let (features, target): (FeatureMatrix, Option<Vec<f64>>) = match &args.target {
        Some(t) => {
            let data = load_csv(&args.data, target_column(t, args.no_header), !args.no_header)
                .with_context(|| format!("loading {}", args.data.display()))?;
            let target = data.target().to_vec();
            (data.features().clone(), Some(target))
        }
        None => {
            let (features, _) = load_feature_csv(&args.data, !args.no_header)
                .with_context(|| format!("loading {}", args.data.display()))?;
            (features, None)
        }
    };

    let labels = predict(&model, &features)?;
    let proba = if args.proba {
        Some(predict_proba(&model, &features)?)
    } else {
        None
    };

    let mut out = String::from("prediction");
    if let Some(p) = &proba {
        for k in 0..p.first().map_or(0, Vec::len) {
            out.push_str(&format!(",p_{k}"));
        }
    }
    out.push('\n');
    for (i, label) in labels.iter().enumerate() {
        out.push_str(&label.to_string());
        if let Some(p) = &proba {
            for v in &p[i] {
                out.push_str(&format!(",{v}"));
            }
        }
        out.push('\n');
    }
    write_atomic(&args.out, &out)?;

    println!("rows={}", labels.len());
    if let Some(y) = target {
        if model.task.is_classification() {
            println!("accuracy={}", bench::accuracy(&labels, &y));
        } else {
            let mse = labels.iter().zip(&y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>()
                / y.len() as f64;
            println!("mse={mse}");
        }
    }
    Ok(())
}

fn cmd_fingerprint(args: FingerprintArgs) -> anyhow::Result<()> {
    let data = args.input.load()?;
    let fp = ProblemFingerprint::compute(&data, !args.no_fast_mode, args.max_depth, args.seed)?;
    for (k, v) in fp.to_key_values() {
        println!("{k}={v}");
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<()> {
    let config = checked_config(args.config.to_config());
    let seed = config.seed;
    let specs: Vec<_> = if args.specs.is_empty() {
        bench::default_suite(seed)
    } else {
        args.specs
            .iter()
            .map(|name| bench::suite_spec(name, seed).expect("validated by clap"))
            .collect()
    };
    let results = bench::run_suite(&specs, &[config], seed);
    write_atomic(&args.out, &bench::results_csv(&results, args.with_timings))?;
    print!("{}", bench::results_table(&results));
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        bail!("{failed} benchmark run(s) failed");
    }
    Ok(())
}

fn configure_threads() {
    let Ok(raw) = std::env::var("MORPHBOOST_THREADS") else {
        return;
    };
    let n: usize = raw
        .trim()
        .parse()
        .unwrap_or_else(|_| usage_error(format!("MORPHBOOST_THREADS must be an integer, got {raw:?}")));
    if n > 0 {
        // only fails if a pool already exists, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Fingerprint(a) => cmd_fingerprint(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
