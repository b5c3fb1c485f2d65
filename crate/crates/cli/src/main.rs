//! `ecr`: anchors, control-token encoding, retrieval, geometry metrics and toy
//! training from the command line.
//!
//! Exit status is 0 on success, 1 when an operation fails (the message names
//! the module and the cause), and 2 on a usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "ecr",
    version,
    about = "Anchor-based control-token conditioning toolkit"
)]
pub struct Cli {
    /// Seed for every random choice; logged in report headers.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Derive per-factor anchors from teacher embeddings.
    BuildAnchors(BuildAnchorsArgs),
    /// Write the control-token prefix of every embedding row.
    Encode(EncodeArgs),
    /// List the top-k anchors of every embedding row.
    Topk(TopkArgs),
    /// Fit a PCA reduction.
    PcaFit(PcaFitArgs),
    /// Build an HNSW index over embeddings.
    IndexBuild(IndexBuildArgs),
    /// Query an HNSW index.
    IndexQuery(IndexQueryArgs),
    /// Measure HNSW query latency.
    Bench(BenchArgs),
    /// Intra/inter/ratio/spread over a manifold partition.
    Geometry(GeometryArgs),
    /// Language-manifold purity.
    Purity(PurityArgs),
    /// Cross-lingual and teacher/student selection consistency.
    Consistency(ConsistencyArgs),
    /// Train the toy model with or without control-token conditioning.
    TrainToy(TrainToyArgs),
    /// Generate the synthetic multilingual corpus and teacher embeddings.
    MakeSynthetic(MakeSyntheticArgs),
    /// Run the factor-subset ablation sweep and write the comparison table.
    Report(ReportArgs),
}

impl Command {
    /// Library module an operation belongs to, for error messages.
    pub fn module(&self) -> &'static str {
        match self {
            Command::BuildAnchors(_) => "anchors",
            Command::Encode(_) | Command::Topk(_) => "ecr_codec",
            Command::PcaFit(_)
            | Command::IndexBuild(_)
            | Command::IndexQuery(_)
            | Command::Bench(_) => "retrieval",
            Command::Geometry(_) | Command::Purity(_) | Command::Consistency(_) => "geometry",
            Command::TrainToy(_) | Command::MakeSynthetic(_) | Command::Report(_) => "toytrain",
        }
    }
}

#[derive(Args, Debug)]
pub struct BuildAnchorsArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Corpus supplying factor labels; without it every factor uses k-means.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "T,L,E,I")]
    pub factors: String,
    #[arg(long, default_value = "auto")]
    pub mode: String,
    /// Clusters per factor in k-means mode.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodeModeArg {
    Global,
    Topk,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScopeArg {
    Factor,
    Global,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub anchors: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_enum, default_value_t = EncodeModeArg::Global)]
    pub mode: EncodeModeArg,
    /// Anchors kept per factor (or overall with `--scope global`) in topk mode.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = ScopeArg::Factor)]
    pub scope: ScopeArg,
    #[arg(long, default_value_t = 8)]
    pub bins: u32,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TopkArgs {
    #[arg(long)]
    pub anchors: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverArg {
    Auto,
    Exact,
    Subspace,
}

#[derive(Args, Debug)]
pub struct PcaFitArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
    pub solver: SolverArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the reduced embeddings here.
    #[arg(long)]
    pub transform: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IndexBuildArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Reduce with this PCA model before indexing.
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long, default_value_t = 200)]
    pub efc: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IndexQueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 64)]
    pub ef: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Existing index; otherwise one is built over `--random` uniform vectors.
    #[arg(long, conflicts_with = "random")]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Query embeddings; otherwise 1000 seeded uniform queries.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 64)]
    pub ef: usize,
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long, default_value_t = 200)]
    pub efc: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionArg {
    Labels,
    Anchors,
}

#[derive(Args, Debug)]
pub struct GeometryArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, value_enum, default_value_t = PartitionArg::Labels)]
    pub partition: PartitionArg,
    /// Corpus with the gold labels (labels partition).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Factor whose labels form the manifolds.
    #[arg(long, default_value = "L")]
    pub factor: String,
    /// Anchors for the top-1 partition.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PurityArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Needed only when row ids carry no `#lang` suffix.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Also list the predicted language of every row.
    #[arg(long)]
    pub assignments: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConsistencyArgs {
    /// Student (or only) embeddings, rows `dialog#lang`.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub anchors: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub topk: usize,
    /// Teacher embeddings for teacher/student agreement and similarity.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Shared PCA dimension when teacher and student widths differ.
    #[arg(long)]
    pub shared_dim: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Switch {
    On,
    Off,
}

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    /// Flat `key = value` config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub ecr: Option<Switch>,
    #[arg(long)]
    pub factors: Option<String>,
    #[arg(long)]
    pub bins: Option<u32>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Frozen anchor file to condition on instead of label anchors.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// Run both arms and write the comparison table.
    #[arg(long)]
    pub paired: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Machine-readable comparison table.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MakeSyntheticArgs {
    #[arg(long, default_value_t = 200)]
    pub n_per_lang: usize,
    /// Labels per factor.
    #[arg(long, default_value_t = 4)]
    pub n_factors: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long)]
    pub corpus_out: PathBuf,
    #[arg(long)]
    pub embeddings_out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let module = cli.command.module();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {module}: {e:#}");
            ExitCode::from(1)
        }
    }
}
