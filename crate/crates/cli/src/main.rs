//! `fedfilm` command-line interface.

mod commands;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedfilm::{AggregationMode, MetricSubset};

#[derive(Debug, Parser)]
#[command(
    name = "fedfilm",
    version,
    about = "Post-hoc batch correction of cell embeddings with federated FiLM adapters"
)]
struct Cli {
    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a FiLM adapter on an embedding and write it with its training log.
    Fit(FitArgs),
    /// Apply a saved adapter to an embedding.
    Transform(TransformArgs),
    /// Score an embedding with the integration metrics.
    Evaluate(EvaluateArgs),
    /// Write a seeded synthetic embedding with known batch effects.
    Synth(SynthArgs),
    /// Run a staged cumulative or continual scenario.
    Scenario(ScenarioArgs),
    /// Project a feature matrix onto its leading principal components.
    BaselinePca(BaselinePcaArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Embedding table (`cell_id` then one column per coordinate).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Metadata table with header `cell_id,batch[,cell_type]`.
    #[arg(long)]
    metadata: Option<PathBuf>,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Args, Default)]
struct TrainOverrides {
    /// Run configuration (TOML); command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for the train split, shuffling and k-means.
    #[arg(long)]
    seed: Option<u64>,
    /// Proximal coefficient.
    #[arg(long)]
    mu: Option<f64>,
    /// L2 coefficient on the adapter tables.
    #[arg(long)]
    lambda: Option<f64>,
    /// Adam step size.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Local epochs per round.
    #[arg(long)]
    local_epochs: Option<usize>,
    /// Federated rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Cells per gradient step.
    #[arg(long)]
    minibatch_size: Option<usize>,
    /// Fraction of each batch used for training; the rest is validation.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// `full-table` or `row-restricted`.
    #[arg(long)]
    aggregation_mode: Option<AggregationMode>,
}

#[derive(Debug, Args, Default)]
struct EvalOverrides {
    /// `full` or `scenario-safe`.
    #[arg(long)]
    subset: Option<MetricSubset>,
    /// Neighbourhood size for the graph metrics.
    #[arg(long)]
    knn_k: Option<usize>,
    /// Restarts for the k-means clustering metrics.
    #[arg(long)]
    kmeans_restarts: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainOverrides,
    /// Start from this adapter instead of identity; frozen rows stay fixed.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Output run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TransformArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Adapter document written by `fit`.
    #[arg(long)]
    adapter: PathBuf,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Run configuration (TOML) supplying metric settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    eval: EvalOverrides,
    /// Seed for k-means restarts.
    #[arg(long)]
    seed: Option<u64>,
    /// Aggregate self-test: precomputed biological conservation score.
    #[arg(long, requires = "batch", conflicts_with_all = ["embeddings", "metadata", "config"])]
    bio: Option<f64>,
    /// Aggregate self-test: precomputed batch correction score.
    #[arg(long, requires = "bio")]
    batch: Option<f64>,
    /// Output run directory (optional in self-test mode).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Generator specification (TOML); flags take precedence.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of batches.
    #[arg(long)]
    n_batches: Option<usize>,
    /// Number of cell types.
    #[arg(long)]
    n_types: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Cells drawn per batch.
    #[arg(long)]
    cells_per_batch: Option<usize>,
    /// Standard deviation of within-type noise.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Standard deviation of additive batch shifts.
    #[arg(long)]
    effect_shift_sigma: Option<f64>,
    /// Smallest per-dimension multiplicative effect.
    #[arg(long)]
    scale_min: Option<f64>,
    /// Largest per-dimension multiplicative effect.
    #[arg(long)]
    scale_max: Option<f64>,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Stage plan (TOML with `mode`, `stages`, optional `pca_components`).
    #[arg(long)]
    plan: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Treat `--embeddings` as raw features re-embedded by PCA per the plan.
    #[arg(long)]
    features: bool,
    #[command(flatten)]
    train: TrainOverrides,
    /// Neighbourhood size for the graph metrics.
    #[arg(long)]
    knn_k: Option<usize>,
    /// Restarts for the k-means clustering metrics.
    #[arg(long)]
    kmeans_restarts: Option<usize>,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BaselinePcaArgs {
    /// Feature table in the embedding format.
    #[arg(long)]
    features: PathBuf,
    /// Number of components to keep.
    #[arg(long)]
    components: usize,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Transform(a) => commands::transform(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Synth(a) => commands::synth(a),
        Command::Scenario(a) => commands::scenario(a),
        Command::BaselinePca(a) => commands::baseline_pca(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.downcast_ref::<commands::Usage>().is_some() {
                2
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}
