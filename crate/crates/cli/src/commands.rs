use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use detkit::augment::{mosaic, LabeledImage, MosaicSpec};
use detkit::eval::{confusion_matrix, map_50_95, EvalConfig};
use detkit::formats::{self, confusion_csv, emit_report, read_classes};
use detkit::gradcheck::{self, LossKind};
use detkit::losses::{
    composite_loss, fitbox, CellPrediction, CellTarget, LossWeights, DEFAULT_MOMENTUM,
    DEFAULT_REG_MAX,
};
use detkit::postprocess::{
    confidence_filter, decode_anchor_free, nms, nms_class_agnostic, soft_nms, GridSpec,
    SoftNmsParams,
};
use detkit::BBox;

use crate::{
    Cli, Command, DecodeArgs, EvalArgs, FitboxArgs, GradcheckArgs, ImageInput, LossArgs,
    MosaicArgs, NmsArgs, SoftNmsArgs,
};

#[derive(Debug)]
pub enum CliError {
    Lib(detkit::Error),
    /// Input was readable but a check on it failed.
    Rejected(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(_) | CliError::Rejected(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Rejected(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<detkit::Error> for CliError {
    fn from(e: detkit::Error) -> Self {
        CliError::Lib(e)
    }
}

type CmdResult = Result<(), CliError>;

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Eval(a) => eval(a),
        Command::Nms(a) => run_nms(a),
        Command::SoftNms(a) => run_soft_nms(a),
        Command::Mosaic(a) => run_mosaic(a),
        Command::Loss(a) => loss(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Fitbox(a) => run_fitbox(a),
        Command::Decode(a) => decode(a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, contents).map_err(|e| CliError::Rejected(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Rejected(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Rejected(format!("{}: {e}", path.display())))
}

fn eval(a: EvalArgs) -> CmdResult {
    let class_names = read_classes(&a.classes)?;
    for dir in [&a.gt, &a.pred] {
        if !dir.is_dir() {
            return Err(CliError::Rejected(format!("{}: not a directory", dir.display())));
        }
    }
    let cfg = EvalConfig {
        iou_min: a.iou_min,
        iou_max: a.iou_max,
        iou_step: a.iou_step,
        confusion_iou: a.confusion_iou,
        confusion_conf: a.confusion_conf,
        strict: a.strict_gt,
    };
    cfg.thresholds()?;
    let ds = formats::load_dataset(&a.gt, Some(&a.pred), class_names.len())?;
    if !ds.diagnostics.is_empty() {
        for d in &ds.diagnostics {
            eprintln!("{}: {}", d.path.display(), d.message);
        }
        return Err(CliError::Rejected(format!(
            "{} file(s) could not be used",
            ds.diagnostics.len()
        )));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    let report = pool.install(|| map_50_95(&ds.images, &class_names, &cfg))?;
    emit_report(&report, &a.out)?;

    if a.confusion {
        let m = confusion_matrix(&ds.images, class_names.len(), &cfg)?;
        let (counts, norm) = confusion_paths(&a.out);
        write_file(&counts, confusion_csv(&m, &class_names, false))?;
        write_file(&norm, confusion_csv(&m, &class_names, true))?;
    }

    let fmt_opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
    println!(
        "mAP50={} mAP50-95={}",
        fmt_opt(report.map50),
        fmt_opt(report.map50_95)
    );
    Ok(())
}

/// `report.json` -> `report_confusion.csv`, `report_confusion_normalized.csv`.
pub fn confusion_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = out.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    (
        out.with_file_name(format!("{stem}_confusion.csv")),
        out.with_file_name(format!("{stem}_confusion_normalized.csv")),
    )
}

fn load_predictions(io: &ImageInput) -> Result<Vec<detkit::Detection>, CliError> {
    if !(0.0..=1.0).contains(&io.conf) {
        return Err(CliError::Rejected(format!("--conf must be in [0, 1], got {}", io.conf)));
    }
    let dets = formats::parse_predictions(&io.input, io.width as f64, io.height as f64, None)?;
    Ok(confidence_filter(&dets, io.conf))
}

fn emit_detections(io: &ImageInput, dets: &[detkit::Detection]) -> CmdResult {
    let text = formats::emit_predictions(dets, io.width as f64, io.height as f64);
    match &io.out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_nms(a: NmsArgs) -> CmdResult {
    if !(0.0..=1.0).contains(&a.iou) {
        return Err(CliError::Rejected(format!("--iou must be in [0, 1], got {}", a.iou)));
    }
    let dets = load_predictions(&a.io)?;
    let kept = if a.agnostic {
        nms_class_agnostic(&dets, a.iou)
    } else {
        nms(&dets, a.iou)
    };
    emit_detections(&a.io, &kept)
}

fn run_soft_nms(a: SoftNmsArgs) -> CmdResult {
    let params = SoftNmsParams {
        method: a.method.parse()?,
        iou_threshold: a.iou,
        sigma: a.sigma,
        score_floor: a.score_floor,
    };
    let dets = load_predictions(&a.io)?;
    let out = soft_nms(&dets, &params)?;
    emit_detections(&a.io, &out)
}

fn run_mosaic(a: MosaicArgs) -> CmdResult {
    let mut imgs = Vec::with_capacity(4);
    for path in &a.inputs {
        let pixels = formats::read_ppm(path)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let label_path = match &a.labels {
            Some(dir) => dir.join(format!("{stem}.txt")),
            None => path.with_extension("txt"),
        };
        let labels = if label_path.is_file() {
            formats::parse_annotations(&label_path, pixels.width as f64, pixels.height as f64, None)?
        } else {
            Vec::new()
        };
        imgs.push(LabeledImage { pixels, labels });
    }
    let spec = if a.random_split {
        MosaicSpec::with_random_split(a.size, a.seed)
    } else {
        MosaicSpec::new(a.size, a.seed)
    };
    let out = mosaic(&imgs, &spec)?;
    let [(_, _, sx, sy), ..] = spec.quadrants()?;
    formats::write_ppm(&a.out_image, &out.pixels)?;
    let n = a.size as f64;
    write_file(&a.out_labels, formats::emit_annotations(&out.labels, n, n))?;
    println!(
        "mosaic size={} split={},{} labels={}",
        a.size,
        sx,
        sy,
        out.labels.len()
    );
    Ok(())
}

fn loss(a: LossArgs) -> CmdResult {
    let weights = LossWeights {
        lambda_box: a.lambda_box,
        lambda_cls: a.lambda_cls,
        lambda_dfl: a.lambda_dfl,
        ..LossWeights::default()
    };
    if a.print_defaults {
        let d = LossWeights::default();
        let v = serde_json::json!({
            "lambda_box": d.lambda_box,
            "lambda_cls": d.lambda_cls,
            "lambda_dfl": d.lambda_dfl,
            "momentum": DEFAULT_MOMENTUM,
            "reg_max": DEFAULT_REG_MAX,
            "weight_decay": d.weight_decay_phi,
        });
        println!("{}", pretty(&v)?);
        return Ok(());
    }
    let path = a.cells.as_deref().expect("required unless --print-defaults");
    let cells: Vec<(CellPrediction, CellTarget)> = read_json(path)?;
    let report = composite_loss(&cells, &weights)?;
    println!("{}", pretty(&report)?);
    Ok(())
}

fn pretty(v: &impl serde::Serialize) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn run_gradcheck(a: GradcheckArgs) -> CmdResult {
    let kind: LossKind = a.loss.parse()?;
    if a.tol.is_nan() || a.tol < 0.0 {
        return Err(CliError::Rejected(format!("--tol must be non-negative, got {}", a.tol)));
    }
    let report = gradcheck::run(kind, a.trials, a.seed)?;
    let mut s = String::new();
    let _ = writeln!(s, "loss={} trials={} seed={} tol={:e}", kind, a.trials, a.seed, a.tol);
    for g in &report.groups {
        let _ = writeln!(
            s,
            "group={} components={} max_deviation={:.3e}",
            g.name, g.components, g.max_deviation
        );
    }
    let pass = report.passes(a.tol);
    let _ = writeln!(
        s,
        "max_deviation={:.3e} result={}",
        report.max_deviation(),
        if pass { "pass" } else { "FAIL" }
    );
    print!("{s}");
    if pass {
        return Ok(());
    }
    let w = report.worst.expect("a failing report has a worst component");
    Err(CliError::Rejected(format!(
        "tolerance {:e} exceeded: trial {} group {} index {} analytic {:.9e} numeric {:.9e} deviation {:.3e}",
        a.tol, w.trial, w.group, w.index, w.analytic, w.numeric, w.deviation
    )))
}

fn parse_box(flag: &str, s: &str) -> Result<BBox, CliError> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|v| v.trim().parse::<f64>()).collect();
    match vals.as_deref() {
        Ok(&[cx, cy, w, h]) => Ok(BBox::new(cx, cy, w, h)?),
        _ => Err(CliError::Rejected(format!(
            "{flag} expects four comma-separated numbers cx,cy,w,h, got {s:?}"
        ))),
    }
}

fn run_fitbox(a: FitboxArgs) -> CmdResult {
    let init = parse_box("--init", &a.init)?;
    let gt = parse_box("--gt", &a.gt)?;
    for (name, b) in [("--init", &init), ("--gt", &gt)] {
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err(CliError::Rejected(format!("{name} needs positive width and height")));
        }
    }
    let traj = fitbox(&init, &gt, a.eta, a.beta, a.steps)?;
    if let Some(path) = &a.csv {
        let mut csv = String::from("step,loss,iou\n");
        for s in &traj {
            let _ = writeln!(csv, "{},{:.9},{:.9}", s.step, s.loss, s.iou);
        }
        write_file(path, csv)?;
    }
    let last = traj.last().expect("trajectory holds at least step 0");
    println!("step={} iou={:.6} loss={:.6}", last.step, last.iou, last.loss);
    Ok(())
}

fn decode(a: DecodeArgs) -> CmdResult {
    let sides: Vec<Vec<f64>> = read_json(&a.logits)?;
    let sides: [Vec<f64>; 4] = sides.try_into().map_err(|v: Vec<Vec<f64>>| {
        CliError::Rejected(format!(
            "{}: expected 4 logit arrays (left, top, right, bottom), got {}",
            a.logits.display(),
            v.len()
        ))
    })?;
    let grid = GridSpec {
        cols: a.cols.unwrap_or(a.col + 1),
        rows: a.rows.unwrap_or(a.row + 1),
        stride: a.stride,
    };
    let b = decode_anchor_free(a.col, a.row, &sides, &grid)?;
    let [x1, y1, x2, y2] = b.corners();
    println!(
        "cx={:.6} cy={:.6} w={:.6} h={:.6} x1={:.6} y1={:.6} x2={:.6} y2={:.6}",
        b.cx, b.cy, b.w, b.h, x1, y1, x2, y2
    );
    Ok(())
}
