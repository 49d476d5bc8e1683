//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failure (verification failures and runtime
//! errors), 2 usage errors.

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{AdapterVariant, RunConfig};
use crate::error::Result;
use crate::harness;
use crate::moe::param_count;
use crate::tasks::TaskSpec;
use crate::train::evaluate;
use crate::verify::{run_suite, Suite};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fourier-moe",
    about = "Spectral mixture-of-experts adapters: training, verification, and spectrum analysis",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its task (or an explicitly given task).
    Eval(EvalArgs),
    /// Run the property-verification suites.
    Verify(VerifyArgs),
    /// Radially binned power spectral density of a checkpoint's experts or
    /// a raw matrix file.
    AnalyzeSpectrum(AnalyzeArgs),
    /// Compare the full method against its ablated variants.
    Ablate(AblateArgs),
    /// Summarize run directories as CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Path to the run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for metrics, evals, config echo, and checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Task spec: inline JSON or a path to a JSON file. Defaults to the
    /// task recorded in the checkpoint.
    #[arg(long)]
    task: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Which suite to run.
    #[arg(long, default_value = "all")]
    suite: String,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// A checkpoint (.fmoe) or raw matrix file (u32 dims + f64 payload).
    #[arg(long)]
    input: PathBuf,
    /// Number of radial bins.
    #[arg(long, default_value_t = 16)]
    bins: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblationAxis {
    /// Drop the imaginary components (real-only coefficients).
    Imaginary,
    /// Drop the real components (imaginary-only coefficients).
    Real,
    /// Drop conjugate pairing (free bins, truncated reconstruction).
    Symmetry,
    /// Drop the frequency bias (uniform index sampling).
    Band,
    /// All four axes.
    All,
}

impl AblationAxis {
    fn variants(self) -> Vec<AdapterVariant> {
        match self {
            AblationAxis::Imaginary => vec![AdapterVariant::RealOnly],
            AblationAxis::Real => vec![AdapterVariant::ImagOnly],
            AblationAxis::Symmetry => vec![AdapterVariant::Unsymmetric],
            AblationAxis::Band => vec![AdapterVariant::RandomIndex],
            AblationAxis::All => vec![
                AdapterVariant::RealOnly,
                AdapterVariant::ImagOnly,
                AdapterVariant::Unsymmetric,
                AdapterVariant::RandomIndex,
            ],
        }
    }
}

#[derive(Args)]
struct AblateArgs {
    /// Path to the run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Which component to ablate.
    #[arg(long, value_enum)]
    axis: AblationAxis,
    /// Seeds per variant.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Optional CSV output path (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing run subdirectories.
    #[arg(long)]
    runs: PathBuf,
    /// Optional CSV output path (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.task.seed = seed;
    }
    std::fs::create_dir_all(&args.out)?;

    let model = crate::config::build_model(&cfg)?;
    let mut counts = (0usize, 0usize);
    for site in model.sites() {
        let pc = param_count(site);
        counts.0 += pc.expert_scalars;
        counts.1 += pc.router_scalars;
    }
    let head = model.head().map(|h| h.param_len()).unwrap_or(0);
    println!(
        "trainable parameters: experts {} + routers {} + head {} = {}",
        counts.0,
        counts.1,
        head,
        counts.0 + counts.1 + head
    );

    let result = harness::run(&cfg)?;
    harness::write_metrics_jsonl(&args.out.join("metrics.jsonl"), &result.log)?;
    harness::write_evals_jsonl(&args.out.join("eval.jsonl"), &result.log)?;
    harness::write_text(&args.out.join("config.json"), &cfg.to_json())?;
    save_checkpoint(&result.state.model, &cfg, &args.out.join("checkpoint.fmoe"))?;
    println!(
        "finished {} steps; final {} = {}",
        result.log.steps.len(),
        result.final_eval.eval_metric,
        result.final_eval.eval_value
    );
    Ok(0)
}

fn parse_task_arg(arg: &str) -> Result<TaskSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg)?
    };
    serde_json::from_str(&text).map_err(|e| crate::error::Error::Config(e.to_string()))
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let (model, mut cfg) = load_checkpoint(&args.checkpoint)?;
    if let Some(task) = &args.task {
        cfg.task = parse_task_arg(task)?;
        cfg.validate()?;
    }
    let dataset = crate::config::build_dataset(&cfg)?;
    let eval = evaluate(&model, &dataset)?;
    println!(
        "{}",
        serde_json::json!({
            "eval_metric": eval.eval_metric,
            "eval_value": eval.eval_value,
        })
    );
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let suite = Suite::parse(&args.suite).ok_or_else(|| {
        crate::error::Error::Config(format!(
            "unknown suite '{}'; expected core|experts|router|grad|all",
            args.suite
        ))
    })?;
    let results = run_suite(suite);
    let mut failed = 0usize;
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status} {} ({}) [{} ms]", r.name, r.detail, r.millis);
        if !r.passed {
            failed += 1;
        }
    }
    println!(
        "{} checks, {} passed, {} failed",
        results.len(),
        results.len() - failed,
        failed
    );
    Ok(if failed == 0 { 0 } else { 1 })
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32> {
    let is_checkpoint = args
        .input
        .extension()
        .map(|e| e == "fmoe")
        .unwrap_or(false)
        || std::fs::read(&args.input)
            .map(|b| b.starts_with(crate::checkpoint::MAGIC))
            .unwrap_or(false);
    let rows = if is_checkpoint {
        harness::analyze_checkpoint_spectrum(&args.input, args.bins)?
    } else {
        harness::analyze_matrix_spectrum(&args.input, args.bins)?
    };
    harness::write_text(&args.out, &harness::spectrum_csv(&rows))?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(0)
}

fn cmd_ablate(args: &AblateArgs) -> Result<i32> {
    let cfg = RunConfig::from_file(&args.config)?;
    let rows = harness::ablate(&cfg, &args.axis.variants(), args.seeds)?;
    let csv = harness::ablation_csv(&rows);
    match &args.out {
        Some(path) => {
            harness::write_text(path, &csv)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(0)
}

fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let rows = harness::collect_report(&args.runs)?;
    let csv = harness::report_csv(&rows);
    match &args.out {
        Some(path) => {
            harness::write_text(path, &csv)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(0)
}

/// Parses `argv` and runs the selected subcommand, returning the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; everything else is a
            // usage error.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Verify(args) => cmd_verify(args),
        Command::AnalyzeSpectrum(args) => cmd_analyze(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(code) => code,
        Err(crate::error::Error::Config(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
