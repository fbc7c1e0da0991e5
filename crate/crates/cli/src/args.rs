use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "audfer",
    version,
    about = "AU knowledge extraction and AU-enhanced expression training"
)]
pub struct Cli {
    /// TOML file with training settings (keys mirror the training config).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a directory of OpenFace CSVs into a frame store.
    Ingest {
        #[arg(long, value_name = "DIR")]
        openface: PathBuf,
        /// Keep zero intensities instead of interpolating them.
        #[arg(long)]
        no_interpolate: bool,
    },
    /// Build one dataset's knowledge matrix from frames and predictions.
    ExtractKnowledge {
        /// OpenFace CSV directory or frame store file.
        #[arg(long, value_name = "PATH")]
        frames: PathBuf,
        #[arg(long, value_name = "FILE")]
        preds: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[arg(long)]
        dataset_id: Option<String>,
        #[arg(long, value_enum, default_value_t = EmptyClasses::Reject)]
        empty_classes: EmptyClasses,
    },
    /// Combine per-dataset matrices into the aggregate matrix.
    AggregateKnowledge {
        #[arg(required = true, value_name = "K")]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "general")]
        midpoint: String,
        /// Write the ×5 loss-scaled matrix instead of the aggregate.
        #[arg(long)]
        loss_scaled: bool,
    },
    /// Derive video-level AU labels from frames.
    PseudoLabel {
        #[arg(long, value_name = "PATH")]
        frames: PathBuf,
        /// `video_id,expression` file.
        #[arg(long, value_name = "FILE")]
        expressions: PathBuf,
    },
    /// Compute positive-class weights from a label file.
    PosWeights {
        #[arg(long, value_name = "FILE")]
        labels: PathBuf,
        #[arg(long, default_value = "distinct")]
        strategy: String,
    },
    /// Generate a synthetic imbalanced benchmark.
    SynthGen {
        /// JSON generator spec; defaults apply to missing keys.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// Train the dual-head model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// λ sweep on the synthetic benchmark.
    Sweep {
        #[command(flatten)]
        bench: BenchArgs,
        /// Comma-separated λ values.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Compare weighting strategies on the synthetic benchmark.
    CompareStrategies {
        #[command(flatten)]
        bench: BenchArgs,
        #[arg(long, default_value = "none,global,distinct,minor")]
        strategies: String,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 8)]
        feature_dim: usize,
        #[arg(long, default_value = "4")]
        hidden: String,
    },
    /// Write the confusion matrix as CSV and SVG heatmap.
    ExportConfusion {
        #[arg(long, value_name = "FILE", requires = "data")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Re-render an existing confusion CSV instead.
        #[arg(long, value_name = "FILE", conflicts_with = "checkpoint")]
        confusion: Option<PathBuf>,
    },
    /// Write per-sample embeddings with labels.
    ExportEmbeddings {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EmptyClasses {
    Reject,
    Neutral,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub train_data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub test_data: Option<PathBuf>,
    /// Aggregate or loss-scaled knowledge file.
    #[arg(long, value_name = "FILE")]
    pub knowledge: Option<PathBuf>,
    /// Precomputed weights; otherwise computed from the training labels.
    #[arg(long, value_name = "FILE")]
    pub pos_weights: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    pub hidden: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// TOML benchmark description (generator, split, extraction, training).
    #[arg(long, value_name = "FILE")]
    pub bench: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, default_value = "0,1,2,3,4")]
    pub seeds: String,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
}
