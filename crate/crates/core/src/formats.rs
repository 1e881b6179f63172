//! Plain-text and binary file formats.
//!
//! * Annotation files: one `class_id cx cy w h` line per object, coordinates
//!   normalized to `[0, 1]` by the image width/height.
//! * Prediction files: the same plus a trailing `confidence` column.
//! * Class tables: one class name per line; the line index is the class id.
//! * Size sidecars: `stem.size` holding `W H`.
//! * Binary PPM (`P6`, maxval 255) rasters.
//! * Evaluation reports as JSON and confusion matrices as CSV.
//!
//! Parsing accepts LF and CRLF line endings; emission always writes LF and
//! six decimal places.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::Raster;
use crate::error::{Error, Result};
use crate::eval::{ConfusionMatrix, EvalReport, ImageRecord};
use crate::geometry::{BBox, GroundTruth};
use crate::postprocess::Detection;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// One parsed line: class, normalized box, optional confidence.
struct Record {
    class_id: usize,
    coords: [f64; 4],
    confidence: Option<f64>,
}

fn parse_records(
    text: &str,
    path: &Path,
    with_confidence: bool,
    num_classes: Option<usize>,
) -> Result<Vec<Record>> {
    let expected = if with_confidence { 6 } else { 5 };
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != expected {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        let class_id: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad class id {:?}", fields[0])))?;
        if let Some(n) = num_classes {
            if class_id >= n {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("class id {class_id} not in class table of {n} classes"),
                ));
            }
        }
        let mut vals = [0.0; 5];
        for (k, f) in fields[1..].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad number {f:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                let what = if k < 4 { "coordinate" } else { "confidence" };
                return Err(parse_err(
                    path,
                    line_no,
                    format!("{what} {f} outside [0, 1]"),
                ));
            }
            vals[k] = v;
        }
        out.push(Record {
            class_id,
            coords: [vals[0], vals[1], vals[2], vals[3]],
            confidence: with_confidence.then_some(vals[4]),
        });
    }
    Ok(out)
}

fn check_dims(image_w: f64, image_h: f64) -> Result<()> {
    if !(image_w > 0.0 && image_h > 0.0 && image_w.is_finite() && image_h.is_finite()) {
        return Err(Error::invalid(format!(
            "image dimensions must be positive, got {image_w}x{image_h}"
        )));
    }
    Ok(())
}

fn denormalize(c: [f64; 4], image_w: f64, image_h: f64) -> BBox {
    BBox {
        cx: c[0] * image_w,
        cy: c[1] * image_h,
        w: c[2] * image_w,
        h: c[3] * image_h,
    }
}

/// Parses annotation text into absolute-pixel ground truths. `path` is only
/// used in error messages.
pub fn parse_annotations_str(
    text: &str,
    path: &Path,
    image_w: f64,
    image_h: f64,
    num_classes: Option<usize>,
) -> Result<Vec<GroundTruth>> {
    check_dims(image_w, image_h)?;
    Ok(parse_records(text, path, false, num_classes)?
        .into_iter()
        .map(|r| GroundTruth::new(denormalize(r.coords, image_w, image_h), r.class_id))
        .collect())
}

pub fn parse_annotations(
    path: &Path,
    image_w: f64,
    image_h: f64,
    num_classes: Option<usize>,
) -> Result<Vec<GroundTruth>> {
    parse_annotations_str(&read_text(path)?, path, image_w, image_h, num_classes)
}

pub fn parse_predictions_str(
    text: &str,
    path: &Path,
    image_w: f64,
    image_h: f64,
    num_classes: Option<usize>,
) -> Result<Vec<Detection>> {
    check_dims(image_w, image_h)?;
    Ok(parse_records(text, path, true, num_classes)?
        .into_iter()
        .map(|r| {
            Detection::new(
                denormalize(r.coords, image_w, image_h),
                r.class_id,
                r.confidence.unwrap_or(0.0),
            )
        })
        .collect())
}

pub fn parse_predictions(
    path: &Path,
    image_w: f64,
    image_h: f64,
    num_classes: Option<usize>,
) -> Result<Vec<Detection>> {
    parse_predictions_str(&read_text(path)?, path, image_w, image_h, num_classes)
}

/// Fixed six-decimal formatting that never prints `-0.000000`.
fn fmt6(v: f64) -> String {
    let s = format!("{:.6}", v);
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn normalized(b: &BBox, image_w: f64, image_h: f64) -> [String; 4] {
    [
        b.cx / image_w,
        b.cy / image_h,
        b.w / image_w,
        b.h / image_h,
    ]
    .map(|v| fmt6(v.clamp(0.0, 1.0)))
}

pub fn emit_annotations(labels: &[GroundTruth], image_w: f64, image_h: f64) -> String {
    let mut s = String::new();
    for g in labels {
        let [cx, cy, w, h] = normalized(&g.bbox, image_w, image_h);
        let _ = writeln!(s, "{} {cx} {cy} {w} {h}", g.class_id);
    }
    s
}

pub fn emit_predictions(dets: &[Detection], image_w: f64, image_h: f64) -> String {
    let mut s = String::new();
    for d in dets {
        let [cx, cy, w, h] = normalized(&d.bbox, image_w, image_h);
        let _ = writeln!(
            s,
            "{} {cx} {cy} {w} {h} {}",
            d.class_id,
            fmt6(d.confidence.clamp(0.0, 1.0))
        );
    }
    s
}

/// Class names, one per non-empty line.
pub fn read_classes(path: &Path) -> Result<Vec<String>> {
    let names: Vec<String> = read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "class table is empty".into(),
        });
    }
    Ok(names)
}

/// Reads a `W H` size sidecar.
pub fn read_size_sidecar(path: &Path) -> Result<(usize, usize)> {
    let text = read_text(path)?;
    let nums: Vec<&str> = text.split_whitespace().collect();
    let parsed: Option<Vec<usize>> = nums.iter().map(|n| n.parse().ok()).collect();
    match parsed.as_deref() {
        Some(&[w, h]) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected \"W H\" with positive integers, got {:?}", text.trim()),
        }),
    }
}

// ---------------------------------------------------------------------------
// PPM

struct PpmHeader {
    width: usize,
    height: usize,
    /// Offset of the first pixel byte.
    data_start: usize,
}

fn ppm_header(bytes: &[u8], path: &Path) -> Result<PpmHeader> {
    let fail = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(fail("not a binary PPM (missing P6 magic)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(fail("truncated PPM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(fail("malformed PPM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail("PPM header value out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(fail("malformed PPM header"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(fail(&format!("unsupported PPM maxval {maxval} (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(fail("PPM has zero size"));
    }
    Ok(PpmHeader {
        width,
        height,
        data_start: pos + 1,
    })
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Raster> {
    let hdr = ppm_header(bytes, path)?;
    let need = hdr.width * hdr.height * 3;
    let payload = &bytes[hdr.data_start..];
    if payload.len() != need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!(
                "PPM payload is {} bytes, expected {need}",
                payload.len()
            ),
        });
    }
    Raster::from_data(hdr.width, hdr.height, payload.to_vec())
}

/// Canonical encoding: `P6\n<w> <h>\n255\n` followed by the pixels.
pub fn encode_ppm(raster: &Raster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.data);
    out
}

pub fn read_ppm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn write_ppm(path: &Path, raster: &Raster) -> Result<()> {
    write_bytes(path, &encode_ppm(raster))
}

/// Width and height from a PPM header without validating the payload.
pub fn ppm_dimensions(path: &Path) -> Result<(usize, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let hdr = ppm_header(&bytes, path)?;
    Ok((hdr.width, hdr.height))
}

// ---------------------------------------------------------------------------
// Dataset layout

/// A file that was skipped or rejected while walking a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    /// Sorted by path.
    pub diagnostics: Vec<Diagnostic>,
}

/// Image size for `stem`: a `stem.size` sidecar next to the labels or in a
/// sibling `images/` directory, else the header of `images/stem.ppm`.
pub fn find_image_size(label_dir: &Path, stem: &str) -> Result<(usize, usize)> {
    let images_dir = label_dir.parent().map(|p| p.join("images"));
    let mut candidates = vec![label_dir.join(format!("{stem}.size"))];
    if let Some(dir) = &images_dir {
        candidates.push(dir.join(format!("{stem}.size")));
    }
    for c in &candidates {
        if c.is_file() {
            return read_size_sidecar(c);
        }
    }
    let mut ppms = vec![label_dir.join(format!("{stem}.ppm"))];
    if let Some(dir) = &images_dir {
        ppms.push(dir.join(format!("{stem}.ppm")));
    }
    for p in &ppms {
        if p.is_file() {
            return ppm_dimensions(p);
        }
    }
    Err(Error::Format {
        path: label_dir.join(format!("{stem}.txt")),
        message: "no image size found (expected a .size sidecar or .ppm image)".into(),
    })
}

/// Sorted `(stem, path)` of the `.txt` files in `dir`, excluding `classes.txt`.
fn txt_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") && path.is_file() {
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            if stem != "classes" {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every label file in `label_dir` and its predictions from
/// `pred_dir` (a missing prediction file means no detections).
///
/// Files that fail to parse, label files without a size, and prediction
/// files without a matching label file are recorded as diagnostics; the walk
/// itself only fails when a directory cannot be read.
pub fn load_dataset(label_dir: &Path, pred_dir: Option<&Path>, num_classes: usize) -> Result<Dataset> {
    let labels = txt_stems(label_dir)?;
    let preds = match pred_dir {
        Some(d) => txt_stems(d)?,
        None => Vec::new(),
    };
    let mut ds = Dataset::default();
    for (stem, path) in &labels {
        let (w, h) = match find_image_size(label_dir, stem) {
            Ok((w, h)) => (w as f64, h as f64),
            Err(e) => {
                ds.diagnostics.push(Diagnostic {
                    path: path.clone(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let gts = match parse_annotations(path, w, h, Some(num_classes)) {
            Ok(g) => g,
            Err(e) => {
                ds.diagnostics.push(Diagnostic {
                    path: path.clone(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let mut dets = Vec::new();
        if let Some((_, ppath)) = preds.iter().find(|(s, _)| s == stem) {
            match parse_predictions(ppath, w, h, Some(num_classes)) {
                Ok(d) => dets = d,
                Err(e) => {
                    ds.diagnostics.push(Diagnostic {
                        path: ppath.clone(),
                        message: e.to_string(),
                    });
                    continue;
                }
            }
        }
        ds.images.push(ImageRecord {
            name: stem.clone(),
            ground_truths: gts,
            detections: dets,
        });
    }
    for (stem, ppath) in &preds {
        if !labels.iter().any(|(s, _)| s == stem) {
            ds.diagnostics.push(Diagnostic {
                path: ppath.clone(),
                message: format!("prediction stem {stem:?} has no matching label file"),
            });
        }
    }
    ds.diagnostics.sort();
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Reports

fn json_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), fmt6)
}

fn json_array(vals: &[f64]) -> String {
    let parts: Vec<String> = vals.iter().map(|&v| fmt6(v)).collect();
    format!("[{}]", parts.join(", "))
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Serializes a report with alphabetically ordered keys and six-decimal
/// fixed-point numbers.
pub fn report_to_json(report: &EvalReport) -> String {
    let mut s = String::from("{\n  \"classes\": [");
    for (i, c) in report.classes.iter().enumerate() {
        s.push_str(if i == 0 { "\n" } else { ",\n" });
        let per_t = c
            .ap_per_threshold
            .as_deref()
            .map_or_else(|| "null".to_string(), json_array);
        let _ = write!(
            s,
            "    {{\"ap50\": {}, \"ap50_95\": {}, \"ap_per_threshold\": {}, \"class_id\": {}, \"n_gt\": {}, \"n_pred\": {}, \"name\": {}}}",
            json_opt(c.ap50),
            json_opt(c.ap50_95),
            per_t,
            c.class_id,
            c.n_gt,
            c.n_pred,
            json_str(&c.name),
        );
    }
    if !report.classes.is_empty() {
        s.push_str("\n  ");
    }
    let _ = write!(
        s,
        "],\n  \"map50\": {},\n  \"map50_95\": {},\n  \"n_gt\": {},\n  \"n_images\": {},\n  \"n_pred\": {},\n  \"thresholds\": {}\n}}\n",
        json_opt(report.map50),
        json_opt(report.map50_95),
        report.n_gt,
        report.n_images,
        report.n_pred,
        json_array(&report.thresholds),
    );
    s
}

pub fn parse_report(json: &str) -> Result<EvalReport> {
    serde_json::from_str(json).map_err(|e| Error::Format {
        path: PathBuf::from("<report>"),
        message: e.to_string(),
    })
}

pub fn emit_report(report: &EvalReport, path: &Path) -> Result<()> {
    write_bytes(path, report_to_json(report).as_bytes())
}

/// Confusion matrix as CSV: header row of predicted classes, one row per
/// ground-truth class, `background` last. Counts are integers; the
/// row-normalized form uses six decimals.
pub fn confusion_csv(matrix: &ConfusionMatrix, class_names: &[String], row_normalized: bool) -> String {
    let mut labels: Vec<String> = class_names.to_vec();
    labels.resize_with(matrix.num_classes, String::new);
    labels.push("background".to_string());
    let mut s = String::from("gt\\pred");
    for l in &labels {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    let norm = matrix.row_normalized();
    for (r, label) in labels.iter().enumerate() {
        s.push_str(label);
        for (count, frac) in matrix.counts[r].iter().zip(&norm[r]) {
            if row_normalized {
                let _ = write!(s, ",{}", fmt6(*frac));
            } else {
                let _ = write!(s, ",{count}");
            }
        }
        s.push('\n');
    }
    s
}
