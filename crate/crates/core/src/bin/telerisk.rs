use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use telerisk_core::pipeline::{Pipeline, PipelineConfig, PipelineError, Stage};

/// Tail-risk scoring of driving trips from accelerometer data.
#[derive(Parser)]
#[command(name = "telerisk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long, env = "TELERISK_CONFIG")]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long, env = "TELERISK_OUT")]
    out: Option<PathBuf>,
    /// Global seed; overrides `seed`.
    #[arg(long, env = "TELERISK_SEED")]
    seed: Option<u64>,
    /// Worker threads; overrides `threads`.
    #[arg(long, env = "TELERISK_THREADS")]
    threads: Option<usize>,
    /// Reuse fitted selection cells whose inputs did not change.
    #[arg(long, env = "TELERISK_RESUME")]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Read the UAH-DriveSet tree into trips.csv.
    Ingest(Common),
    /// Generate a synthetic cohort into trips.csv.
    Synth(Common),
    /// MODWT and aggregation of every trip.
    Decompose(Common),
    /// Thin and pool the aggregated coefficients.
    Portfolio(Common),
    /// Fit the severity mixture over the selection grid.
    Fit(Common),
    /// Tail counts, priors and severity weights.
    Weights(Common),
    /// Trip and sequential driver indices.
    Score(Common),
    /// Cross-validated classification.
    Classify(Common),
    /// Table and figure shaped summaries.
    Report(Common),
}

impl Command {
    fn split(self) -> (Stage, Common) {
        match self {
            Command::Ingest(c) => (Stage::Ingest, c),
            Command::Synth(c) => (Stage::Synth, c),
            Command::Decompose(c) => (Stage::Decompose, c),
            Command::Portfolio(c) => (Stage::Portfolio, c),
            Command::Fit(c) => (Stage::Fit, c),
            Command::Weights(c) => (Stage::Weights, c),
            Command::Score(c) => (Stage::Score, c),
            Command::Classify(c) => (Stage::Classify, c),
            Command::Report(c) => (Stage::Report, c),
        }
    }
}

fn run(stage: Stage, args: Common) -> Result<(), PipelineError> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    let mut pipeline = Pipeline::new(cfg)?;
    pipeline.resume = args.resume;
    if let Some(n) = pipeline.config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::config(format!("thread pool: {e}")))?;
    }
    pipeline.run(stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TELERISK_LOG", "info")).init();
    let (stage, args) = Cli::parse().command.split();
    match run(stage, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{stage}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
