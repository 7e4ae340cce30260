//! `illu`: synthetic two-domain data, baseline training, adaptive
//! fine-tuning, SVM on neural codes, evaluation and embeddings, as
//! subcommands that hand off through files.

mod commands;
pub mod pipeline;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use illu_core::dataset::DatasetError;
use illu_core::eval::EvalError;
use illu_core::network::{NetworkError, ScaleConfig};
use illu_core::svm::SvmError;
use illu_core::tensor::{TensorError, TrainConfig};
use illu_core::transfer::TransferError;

pub use commands::run;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    /// 2 usage or configuration, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(..) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } | DatasetError::Config(_) | DatasetError::Fractions(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Config(_) | TensorError::MissingLearningRate(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Tensor(t) => t.into(),
            NetworkError::Dataset(d) => d.into(),
            NetworkError::Scale(_) | NetworkError::TopK { .. } | NetworkError::Io { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TransferError> for CliError {
    fn from(e: TransferError) -> Self {
        match e {
            TransferError::Network(n) => n.into(),
            TransferError::Tensor(t) => t.into(),
            TransferError::Numeric { .. } => CliError::Numeric(e.to_string()),
            TransferError::Policy(_) | TransferError::Io { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SvmError> for CliError {
    fn from(e: SvmError) -> Self {
        match e {
            SvmError::Param(_) | SvmError::TopK { .. } | SvmError::Io { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Diverged(_) => CliError::Numeric(e.to_string()),
            EvalError::TopK { .. } | EvalError::Perplexity { .. } | EvalError::TooManyPoints { .. } | EvalError::Io { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

#[derive(Debug, Parser)]
#[command(name = "illu", version, about = "Photo-to-illustration transfer learning pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic natural and/or illustration datasets.
    Gen(GenArgs),
    /// Map image names to classes by shared name tokens.
    Map(MapArgs),
    /// Assign stratified train/val/test splits to a manifest.
    Split(SplitArgs),
    /// Train a network from scratch.
    Train(TrainArgs),
    /// Adapt a trained network to a new domain with a layer policy.
    Finetune(FinetuneArgs),
    /// Extract neural codes (fc2 activations).
    Codes(CodesArgs),
    /// Train a one-vs-rest SVM on neural codes, optionally grid-searched.
    Svm(SvmArgs),
    /// Write full class rankings for a split.
    Predict(PredictArgs),
    /// Top-k precision and per-class report from a predictions file.
    Eval(EvalArgs),
    /// t-SNE embedding of neural codes with neighbor purity.
    Embed(EmbedArgs),
    /// Merge four report files into the model comparison table.
    Report(ReportArgs),
    /// Run the whole four-model comparison.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainChoice {
    Natural,
    Illustration,
    Both,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value_t = 64)]
    pub side: usize,
    #[arg(long, value_enum, default_value_t = DomainChoice::Both)]
    pub domain: DomainChoice,
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value = "0.64,0.16,0.20")]
    pub fractions: String,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// One image name per line.
    #[arg(long)]
    pub images: PathBuf,
    /// One class name per line.
    #[arg(long)]
    pub classes: PathBuf,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "0.64,0.16,0.20")]
    pub fractions: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ScaleArgs {
    #[arg(long, default_value_t = 64)]
    pub side: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Convolutions per pooling stage.
    #[arg(long, default_value = "2,2,4,4,4")]
    pub blocks: String,
    #[arg(long, default_value_t = 8)]
    pub base_width: usize,
    #[arg(long, default_value_t = 64)]
    pub width_cap: usize,
    #[arg(long, default_value = "64,64")]
    pub fc: String,
}

impl ScaleArgs {
    pub fn to_scale(&self) -> Result<ScaleConfig> {
        let fc = parse_list(&self.fc, "--fc")?;
        let [a, b] = fc[..] else {
            return Err(CliError::Usage(format!("--fc needs two widths, got {:?}", self.fc)));
        };
        let scale = ScaleConfig {
            input_side: self.side,
            input_channels: self.channels,
            blocks: parse_list(&self.blocks, "--blocks")?,
            base_width: self.base_width,
            width_cap: self.width_cap,
            fc_dims: [a, b],
        };
        scale.validate()?;
        Ok(scale)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 8)]
    pub patience: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Learning rate for training from scratch.
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f32,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f32,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f32,
}

impl OptimArgs {
    pub fn to_config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            dropout_p: self.dropout,
            base_lr: self.lr,
            max_epochs: self.epochs,
            patience: self.patience,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss and validation accuracy.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

pub const DEFAULT_POLICY: &str = "reset=1-10,17-19; lr.reset=1e-2; lr.keep=1e-4";

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = DEFAULT_POLICY)]
    pub policy: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct CodesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated splits, or `all`.
    #[arg(long, default_value = "all")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SvmArgs {
    #[arg(long)]
    pub codes: PathBuf,
    /// Supplies the class of every code row.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Grid file (`kernel C gamma` per line) or `default`; overrides
    /// --kernel/--c/--gamma.
    #[arg(long)]
    pub grid: Option<String>,
    /// Per-cell cross-validation scores.
    #[arg(long)]
    pub grid_out: Option<PathBuf>,
    #[arg(long, default_value = "rbf")]
    pub kernel: String,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub coef0: f64,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long)]
    pub standardize: bool,
    /// Required with --grid (fold assignment).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Network; its softmax ranks classes unless --svm is given.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub svm: Option<PathBuf>,
    /// Precomputed codes for --svm instead of a checkpoint.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Per-class top-1/top-5 table.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub confusion: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub codes: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub kl_out: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Neighbors used for the purity score.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub baseline_svm: PathBuf,
    #[arg(long)]
    pub optimized: PathBuf,
    #[arg(long)]
    pub optimized_svm: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    #[arg(long, default_value = "0.64,0.16,0.20")]
    pub fractions: String,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value = DEFAULT_POLICY)]
    pub policy: String,
    #[arg(long, default_value = "default")]
    pub grid: String,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub tsne_iterations: usize,
    #[arg(long, default_value_t = 10)]
    pub purity_k: usize,
}

pub(crate) fn parse_list(text: &str, flag: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("{flag}: bad list {text:?}"))))
        .collect()
}
