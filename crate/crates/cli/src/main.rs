mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use textomic::analysis::AnalysisError;
use textomic::model::ModelError;
use textomic::numerics::NumericsError;
use textomic::training::TrainError;

#[derive(Parser, Debug)]
#[command(
    name = "textomic",
    version,
    about = "Path-aware graph transformer pipelines for single-cell expression"
)]
pub struct Cli {
    /// Run configuration file. Defaults to `<out>/textomic.conf` when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replaces the configured seed list with a single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic fixture with a planted discriminative path.
    Synth(SynthArgs),
    /// Embed gene and path descriptions into an embedding store.
    Embed(EmbedArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Score trained models on their test splits.
    Eval,
    /// Rank paths by learned importance and derive a network.
    ExtractPaths(ExtractArgs),
    /// Cell importance per population and a time-pruned trajectory.
    Trajectory(TrajectoryArgs),
    /// Score an inferred network against a gold standard.
    NetEval(NetEvalArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub genes: usize,
    #[arg(long, default_value_t = 8)]
    pub paths: usize,
    #[arg(long, default_value_t = 500)]
    pub cells: usize,
    #[arg(long, default_value_t = 3.0)]
    pub effect_size: f64,
    #[arg(long, default_value_t = 0)]
    pub signal_path: usize,
    #[arg(long, default_value_t = 4)]
    pub populations: usize,
    #[arg(long, default_value_t = 2)]
    pub edge_types: usize,
    /// Width of the mock sentence embeddings.
    #[arg(long, default_value_t = textomic::text::DEFAULT_D_LLM)]
    pub d_llm: usize,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    /// Deterministic hash-seeded embeddings, no network access.
    #[arg(long, conflicts_with = "endpoint")]
    pub mock: bool,
    /// Embedding service URL.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub d_llm: Option<usize>,
    /// Store file. Defaults to the configured store or `<out>/embeddings.tnge`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Number of paths to report.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrajectoryArgs {
    /// Target population. Defaults to the one with the latest mean time.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Args, Debug)]
pub struct NetEvalArgs {
    /// Inferred network TSV. Defaults to the first seed's `network.tsv`.
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub max_edges: Option<usize>,
    /// Treat both networks as undirected.
    #[arg(long)]
    pub undirected: bool,
}

/// An invocation that cannot run as written.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// An output that already exists and `--force` was not given.
#[derive(Debug)]
pub struct Refused(pub PathBuf);

impl std::fmt::Display for Refused {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "refusing to overwrite {} (pass --force)",
            self.0.display()
        )
    }
}

impl std::error::Error for Refused {}

fn model_numeric(e: &ModelError) -> bool {
    matches!(e, ModelError::Numerics(NumericsError::NonFinite(_)))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        let numeric = cause
            .downcast_ref::<TrainError>()
            .is_some_and(TrainError::is_numeric)
            || cause
                .downcast_ref::<ModelError>()
                .is_some_and(model_numeric)
            || matches!(cause.downcast_ref::<AnalysisError>(), Some(AnalysisError::Model(m)) if model_numeric(m))
            || matches!(
                cause.downcast_ref::<NumericsError>(),
                Some(NumericsError::NonFinite(_))
            );
        if numeric {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
