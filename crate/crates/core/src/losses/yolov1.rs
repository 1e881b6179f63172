//! Original single-shot YOLO loss over an `S x S x (B*5 + C)` output tensor.
//!
//! Per cell the tensor holds `B` boxes `(x, y, w, h, conf)` followed by `C`
//! class probabilities. `x, y` are offsets inside the cell in `[0, 1]`; `w, h`
//! are fractions of the image. The responsible predictor of an object cell
//! is the box with the highest IoU against the ground truth (lowest index on
//! ties) and its confidence target is 1; every other box has target 0.

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Floor applied to predicted widths/heights under the square root.
pub const SQRT_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Yolo1Config {
    pub grid_s: usize,
    pub boxes_b: usize,
    pub classes_c: usize,
    pub lambda_coord: f64,
    pub lambda_noobj: f64,
}

impl Default for Yolo1Config {
    fn default() -> Self {
        Yolo1Config {
            grid_s: 7,
            boxes_b: 2,
            classes_c: 20,
            lambda_coord: 5.0,
            lambda_noobj: 0.5,
        }
    }
}

impl Yolo1Config {
    pub fn cell_len(&self) -> usize {
        self.boxes_b * 5 + self.classes_c
    }

    pub fn tensor_len(&self) -> usize {
        self.grid_s * self.grid_s * self.cell_len()
    }

    fn validate(&self) -> Result<()> {
        if self.grid_s == 0 || self.boxes_b == 0 || self.classes_c == 0 {
            return Err(Error::invalid("S, B and C must all be at least 1"));
        }
        if !(self.lambda_coord.is_finite() && self.lambda_noobj.is_finite()) {
            return Err(Error::invalid("loss coefficients must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Yolo1Object {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: usize,
}

/// One optional object per cell, row-major, `S * S` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Yolo1Target {
    pub cells: Vec<Option<Yolo1Object>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Yolo1Loss {
    pub value: f64,
    /// Number of predicted widths/heights raised to [`SQRT_FLOOR`].
    pub clamped: usize,
}

fn check(pred: &[f64], target: &Yolo1Target, cfg: &Yolo1Config) -> Result<()> {
    cfg.validate()?;
    if pred.len() != cfg.tensor_len() {
        return Err(Error::invalid(format!(
            "prediction tensor has {} values, expected S*S*(B*5+C) = {}",
            pred.len(),
            cfg.tensor_len()
        )));
    }
    if let Some(v) = pred.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite prediction value {v}")));
    }
    if target.cells.len() != cfg.grid_s * cfg.grid_s {
        return Err(Error::invalid(format!(
            "target has {} cells, expected {}",
            target.cells.len(),
            cfg.grid_s * cfg.grid_s
        )));
    }
    for obj in target.cells.iter().flatten() {
        if obj.class_id >= cfg.classes_c {
            return Err(Error::invalid(format!("class id {} out of range", obj.class_id)));
        }
        if !(obj.w >= 0.0 && obj.h >= 0.0 && obj.x.is_finite() && obj.y.is_finite()) {
            return Err(Error::invalid(format!("invalid target box {obj:?}")));
        }
    }
    Ok(())
}

/// Box `j` of cell `cell` in image-fraction coordinates, for IoU only.
fn image_box(cell_vals: &[f64], j: usize, cell: usize, s: usize) -> BBox {
    let (row, col) = (cell / s, cell % s);
    let v = &cell_vals[j * 5..j * 5 + 5];
    BBox {
        cx: (col as f64 + v[0]) / s as f64,
        cy: (row as f64 + v[1]) / s as f64,
        w: v[2].max(0.0),
        h: v[3].max(0.0),
    }
}

fn candidate_ious(cell_vals: &[f64], obj: &Yolo1Object, cell: usize, cfg: &Yolo1Config) -> Vec<f64> {
    let s = cfg.grid_s;
    let (row, col) = (cell / s, cell % s);
    let gt = BBox {
        cx: (col as f64 + obj.x) / s as f64,
        cy: (row as f64 + obj.y) / s as f64,
        w: obj.w,
        h: obj.h,
    };
    (0..cfg.boxes_b)
        .map(|j| image_box(cell_vals, j, cell, s).iou(&gt))
        .collect()
}

fn responsible(cell_vals: &[f64], obj: &Yolo1Object, cell: usize, cfg: &Yolo1Config) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, iou) in candidate_ious(cell_vals, obj, cell, cfg).into_iter().enumerate() {
        if iou > best.1 {
            best = (j, iou);
        }
    }
    best.0
}

/// Gap between the best and runner-up IoU of the candidate boxes in every
/// object cell (infinite with a single box). Small gaps mean a tiny change
/// of the prediction can switch the responsible predictor.
pub(crate) fn responsible_margin(pred: &[f64], target: &Yolo1Target, cfg: &Yolo1Config) -> f64 {
    let mut margin = f64::INFINITY;
    for (cell, obj) in target.cells.iter().enumerate() {
        let Some(obj) = obj else { continue };
        let base = cell * cfg.cell_len();
        let mut ious = candidate_ious(&pred[base..base + cfg.cell_len()], obj, cell, cfg);
        ious.sort_by(|a, b| b.total_cmp(a));
        if ious.len() > 1 && ious[0] > 0.0 {
            margin = margin.min(ious[0] - ious[1]);
        }
    }
    margin
}

/// Tensor that a perfect network would output for `target`: the object is
/// placed in box slot 0 with confidence 1, other slots and empty cells are 0.
pub fn encode_yolov1_target(target: &Yolo1Target, cfg: &Yolo1Config) -> Result<Vec<f64>> {
    check(&vec![0.0; cfg.tensor_len()], target, cfg)?;
    let mut out = vec![0.0; cfg.tensor_len()];
    for (cell, obj) in target.cells.iter().enumerate() {
        if let Some(obj) = obj {
            let base = cell * cfg.cell_len();
            out[base..base + 5].copy_from_slice(&[obj.x, obj.y, obj.w, obj.h, 1.0]);
            out[base + cfg.boxes_b * 5 + obj.class_id] = 1.0;
        }
    }
    Ok(out)
}

/// Shared pass: accumulates the loss and, when `grad` is given, its gradient.
fn evaluate(
    pred: &[f64],
    target: &Yolo1Target,
    cfg: &Yolo1Config,
    mut grad: Option<&mut [f64]>,
) -> Yolo1Loss {
    let cl = cfg.cell_len();
    let nb = cfg.boxes_b;
    let mut value = 0.0;
    let mut clamped = 0;
    for (cell, obj) in target.cells.iter().enumerate() {
        let base = cell * cl;
        let vals = &pred[base..base + cl];
        let resp = obj.as_ref().map(|o| responsible(vals, o, cell, cfg));
        for j in 0..nb {
            let conf_idx = base + j * 5 + 4;
            let conf = pred[conf_idx];
            match (obj, resp) {
                (Some(o), Some(r)) if r == j => {
                    let b = base + j * 5;
                    let (dx, dy) = (pred[b] - o.x, pred[b + 1] - o.y);
                    value += cfg.lambda_coord * (dx * dx + dy * dy);
                    let mut sq = [0.0; 2];
                    for (k, (&p, t)) in [pred[b + 2], pred[b + 3]]
                        .iter()
                        .zip([o.w, o.h])
                        .enumerate()
                    {
                        let clamp = p < SQRT_FLOOR;
                        if p < 0.0 {
                            clamped += 1;
                        }
                        let rp = p.max(SQRT_FLOOR).sqrt();
                        let d = rp - t.sqrt();
                        value += cfg.lambda_coord * d * d;
                        sq[k] = if clamp { 0.0 } else { cfg.lambda_coord * d / rp };
                    }
                    let dc = conf - 1.0;
                    value += dc * dc;
                    if let Some(g) = grad.as_deref_mut() {
                        g[b] += 2.0 * cfg.lambda_coord * dx;
                        g[b + 1] += 2.0 * cfg.lambda_coord * dy;
                        g[b + 2] += sq[0];
                        g[b + 3] += sq[1];
                        g[conf_idx] += 2.0 * dc;
                    }
                }
                _ => {
                    value += cfg.lambda_noobj * conf * conf;
                    if let Some(g) = grad.as_deref_mut() {
                        g[conf_idx] += 2.0 * cfg.lambda_noobj * conf;
                    }
                }
            }
        }
        if let Some(o) = obj {
            for c in 0..cfg.classes_c {
                let idx = base + nb * 5 + c;
                let p = if c == o.class_id { 1.0 } else { 0.0 };
                let d = pred[idx] - p;
                value += d * d;
                if let Some(g) = grad.as_deref_mut() {
                    g[idx] += 2.0 * d;
                }
            }
        }
    }
    Yolo1Loss { value, clamped }
}

pub fn yolov1_loss(pred: &[f64], target: &Yolo1Target, cfg: &Yolo1Config) -> Result<Yolo1Loss> {
    check(pred, target, cfg)?;
    Ok(evaluate(pred, target, cfg, None))
}

/// Gradient with respect to every entry of the prediction tensor, holding
/// the responsible-predictor assignment fixed.
pub fn yolov1_loss_grad(pred: &[f64], target: &Yolo1Target, cfg: &Yolo1Config) -> Result<Vec<f64>> {
    check(pred, target, cfg)?;
    let mut g = vec![0.0; pred.len()];
    evaluate(pred, target, cfg, Some(&mut g));
    Ok(g)
}
