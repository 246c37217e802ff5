use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tlinedet::anchors::DistanceMetric;

pub const DEFAULT_SEED: u64 = 41;

#[derive(Parser, Debug)]
#[command(
    name = "tlinedet",
    version,
    about = "Anchor clustering, attention/loss checks and detection metrics for small-object line detection",
    after_help = "Exit codes: 0 success, 1 validation error, 2 numeric or tolerance failure, 64 usage error."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Per-class box counts, mean sizes and a width/height histogram
    Stats(StatsArgs),
    /// Seeded train/val/test split of a dataset
    Split(SplitArgs),
    /// Apply augmentation ops to every image of a dataset
    Augment(AugmentArgs),
    /// Cluster box shapes into anchors
    Anchors(AnchorsArgs),
    /// Cluster with both distance metrics and report anchor fitness
    CompareMetrics(CompareArgs),
    /// Evaluate detections against ground truth (AP, mAP, precision, recall)
    Eval(EvalArgs),
    /// Focal loss and its gradient
    Focal(FocalArgs),
    /// Finite-difference check of the attention block's backward pass
    CbamCheck(CbamCheckArgs),
    /// Time the attention block's forward pass
    Bench(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorFormat {
    Json,
    /// One line of 18 rounded integers, as used in YOLO model configs
    Yolo,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricArg {
    Euclidean,
    OneMinusIou,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => DistanceMetric::Euclidean,
            MetricArg::OneMinusIou => DistanceMetric::OneMinusIou,
        }
    }
}

/// Options shared by every subcommand.
#[derive(Args, Debug)]
pub struct Common {
    /// key=value file whose entries act as defaults for this subcommand's flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Write the report here instead of stdout
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset directory (images or manifest.txt, plus one .txt per image)
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Class list file, or comma-separated names [default: <DATA>/classes.txt]
    #[arg(long, value_name = "FILE|NAMES")]
    pub classes: Option<String>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Histogram bins per axis
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Also write the width×height histogram grid as CSV
    #[arg(long, value_name = "PATH")]
    pub histogram: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// train,val,test ratios
    #[arg(long, default_value = "8,1,1", value_name = "R,R,R")]
    pub ratios: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Write train/, val/ and test/ annotation directories here
    #[arg(long, value_name = "DIR")]
    pub write_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// ';'-separated ops, e.g. "hflip;affine:rot=-10..10,scale=0.9..1.1;blur:sigma=0.5..1.5"
    #[arg(long, value_name = "OPS")]
    pub ops: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Output directory for the augmented dataset
    #[arg(long, value_name = "DIR")]
    pub write_dir: PathBuf,
    /// Transform annotations only; do not decode or write images
    #[arg(long)]
    pub annotations_only: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// Number of clusters; nine yields a grouped anchor set
    #[arg(long, default_value_t = 9)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Square network input side the boxes are letterboxed to
    #[arg(long, default_value_t = 640)]
    pub input_size: u32,
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    /// IoU an anchor must reach for a shape to count as recallable
    #[arg(long, default_value_t = tlinedet::anchors::DEFAULT_BPR_THRESHOLD)]
    pub bpr_threshold: f64,
}

#[derive(Args, Debug)]
pub struct AnchorsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = MetricArg::OneMinusIou)]
    pub metric: MetricArg,
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[arg(long, value_enum, default_value_t = AnchorFormat::Json)]
    pub format: AnchorFormat,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground-truth dataset directory
    #[arg(long, value_name = "DIR")]
    pub gt: PathBuf,
    /// Class list file, or comma-separated names [default: <GT>/classes.txt]
    #[arg(long, value_name = "FILE|NAMES")]
    pub classes: Option<String>,
    /// Detections, one "image_id class_id confidence x1 y1 x2 y2" per line
    #[arg(long, value_name = "FILE")]
    pub dets: PathBuf,
    /// IoU for the headline mAP and the precision/recall counts
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Confidence cut for precision/recall (AP uses every detection)
    #[arg(long, default_value_t = 0.25)]
    pub conf: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Also write per-class PR curves at --iou as CSV
    #[arg(long, value_name = "PATH")]
    pub pr_curve: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct FocalArgs {
    /// Predicted probabilities, comma-separated
    #[arg(long, value_delimiter = ',', conflicts_with = "grid")]
    pub p: Vec<f64>,
    /// Evaluate at p = i/(N+1), i = 1..N
    #[arg(long, value_name = "N")]
    pub grid: Option<usize>,
    /// Ground-truth label, 0 or 1
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub label: u8,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct BlockArgs {
    /// Input dims n,c,h,w [default: 2,16,5,5 for cbam-check, 1,64,40,40 for bench]
    #[arg(long, value_delimiter = ',', value_name = "N,C,H,W")]
    pub shape: Option<Vec<usize>>,
    /// Channel reduction ratio of the gate MLP
    #[arg(long, default_value_t = tlinedet::nn::DEFAULT_REDUCTION)]
    pub reduction: usize,
    /// Odd side of the spatial-gate kernel
    #[arg(long, default_value_t = tlinedet::nn::DEFAULT_KERNEL_SIZE)]
    pub kernel_size: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Load parameters from a blob written by --save-params
    #[arg(long, value_name = "FILE")]
    pub load_params: Option<PathBuf>,
    /// Save the parameters used to a blob
    #[arg(long, value_name = "FILE")]
    pub save_params: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CbamCheckArgs {
    #[command(flatten)]
    pub block: BlockArgs,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub block: BlockArgs,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[command(flatten)]
    pub common: Common,
}
