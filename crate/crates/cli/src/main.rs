mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Object-detection evaluation and loss toolkit.
///
/// Exit status: 0 on success, 1 on invalid input (bad flags, unreadable or
/// malformed files, failed checks), 2 on internal errors.
#[derive(Debug, Parser)]
#[command(name = "detkit", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score prediction files against ground truth (mAP50 and mAP50-95).
    Eval(EvalArgs),
    /// Greedy non-maximum suppression over a prediction file.
    Nms(NmsArgs),
    /// Soft-NMS (linear or gaussian score decay) over a prediction file.
    SoftNms(SoftNmsArgs),
    /// Tile four labeled PPM images into one mosaic.
    Mosaic(MosaicArgs),
    /// Evaluate the composite detection loss on cells read from JSON.
    Loss(LossArgs),
    /// Compare analytic loss gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Fit a box to a target by momentum SGD on the CIoU loss.
    Fitbox(FitboxArgs),
    /// Decode one anchor-free cell from its distance logits.
    Decode(DecodeArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of ground-truth label files (`stem.txt`) with sizes.
    #[arg(long, value_name = "DIR")]
    pub gt: PathBuf,
    /// Directory of prediction files (`stem.txt`, with confidence column).
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    /// Class table, one name per line.
    #[arg(long, value_name = "FILE")]
    pub classes: PathBuf,
    /// Loosest IoU threshold of the sweep.
    #[arg(long, default_value_t = 0.5)]
    pub iou_min: f64,
    /// Strictest IoU threshold of the sweep.
    #[arg(long, default_value_t = 0.95)]
    pub iou_max: f64,
    /// Spacing of the IoU thresholds.
    #[arg(long, default_value_t = 0.05)]
    pub iou_step: f64,
    /// Require IoU strictly greater than the threshold for a match.
    #[arg(long)]
    pub strict_gt: bool,
    /// Also write confusion-matrix CSVs next to the report.
    #[arg(long)]
    pub confusion: bool,
    /// IoU needed to pair boxes in the confusion matrix.
    #[arg(long, default_value_t = 0.5)]
    pub confusion_iou: f64,
    /// Detections below this confidence are ignored by the confusion matrix.
    #[arg(long, default_value_t = 0.25)]
    pub confusion_conf: f64,
    /// Report JSON path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ImageInput {
    /// Prediction file (`class cx cy w h conf`, normalized).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Image width in pixels.
    #[arg(long)]
    pub width: usize,
    /// Image height in pixels.
    #[arg(long)]
    pub height: usize,
    /// Drop detections below this confidence first.
    #[arg(long, default_value_t = 0.20)]
    pub conf: f64,
    /// Write the result here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NmsArgs {
    #[command(flatten)]
    pub io: ImageInput,
    /// Overlap at or above which the lower-ranked box is removed.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Let boxes of different classes suppress each other.
    #[arg(long)]
    pub agnostic: bool,
}

#[derive(Debug, Args)]
pub struct SoftNmsArgs {
    #[command(flatten)]
    pub io: ImageInput,
    /// Decay function: linear or gaussian.
    #[arg(long, default_value = "linear")]
    pub method: String,
    /// Overlap at or above which the linear decay applies.
    #[arg(long, default_value_t = 0.3)]
    pub iou: f64,
    /// Width of the gaussian decay.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Detections whose decayed score falls below this are removed.
    #[arg(long, default_value_t = detkit::postprocess::DEFAULT_SCORE_FLOOR)]
    pub score_floor: f64,
}

#[derive(Debug, Args)]
pub struct MosaicArgs {
    /// Four PPM images: top-left, top-right, bottom-left, bottom-right.
    /// Labels are read from `stem.txt` next to each image when present.
    #[arg(long, num_args = 4, required = true, value_name = "PPM")]
    pub inputs: Vec<PathBuf>,
    /// Directory to read label files from instead of the image directories.
    #[arg(long, value_name = "DIR")]
    pub labels: Option<PathBuf>,
    /// Side length of the square output.
    #[arg(long, default_value_t = detkit::augment::DEFAULT_MOSAIC_SIZE)]
    pub size: usize,
    /// Seed for crop placement (and the split point with --random-split).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw the split point at random instead of using the center.
    #[arg(long)]
    pub random_split: bool,
    /// Output image path.
    #[arg(long, value_name = "PPM")]
    pub out_image: PathBuf,
    /// Output label path (normalized annotation format).
    #[arg(long, value_name = "FILE")]
    pub out_labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// JSON array of `[prediction, target]` cell pairs.
    #[arg(long, value_name = "FILE", required_unless_present = "print_defaults")]
    pub cells: Option<PathBuf>,
    /// Weight of the box term.
    #[arg(long, default_value_t = detkit::losses::DEFAULT_LAMBDA_BOX)]
    pub lambda_box: f64,
    /// Weight of the classification term.
    #[arg(long, default_value_t = detkit::losses::DEFAULT_LAMBDA_CLS)]
    pub lambda_cls: f64,
    /// Weight of the distribution focal term.
    #[arg(long, default_value_t = detkit::losses::DEFAULT_LAMBDA_DFL)]
    pub lambda_dfl: f64,
    /// Print the default hyper-parameters as JSON and exit.
    #[arg(long)]
    pub print_defaults: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Loss to check: ciou, bce, dfl, composite or yolov1.
    #[arg(long)]
    pub loss: String,
    /// Number of random instances.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Largest allowed deviation.
    #[arg(long, default_value_t = detkit::gradcheck::DEFAULT_TOLERANCE)]
    pub tol: f64,
    /// Seed of the instance generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitboxArgs {
    /// Starting box as `cx,cy,w,h`.
    #[arg(long, value_name = "CX,CY,W,H", allow_hyphen_values = true)]
    pub init: String,
    /// Target box as `cx,cy,w,h`.
    #[arg(long, value_name = "CX,CY,W,H", allow_hyphen_values = true)]
    pub gt: String,
    /// Learning rate.
    #[arg(long, default_value_t = 0.05)]
    pub eta: f64,
    /// Momentum.
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    /// Maximum number of updates.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Write the per-step trajectory (step,loss,iou) here.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// JSON array of four logit arrays (left, top, right, bottom).
    #[arg(long, value_name = "FILE")]
    pub logits: PathBuf,
    /// Cell column.
    #[arg(long)]
    pub col: usize,
    /// Cell row.
    #[arg(long)]
    pub row: usize,
    /// Pixels per cell.
    #[arg(long)]
    pub stride: f64,
    /// Grid columns (defaults to col + 1).
    #[arg(long)]
    pub cols: Option<usize>,
    /// Grid rows (defaults to row + 1).
    #[arg(long)]
    pub rows: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = std::panic::catch_unwind(|| commands::run(cli));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(2)
        }
    }
}
