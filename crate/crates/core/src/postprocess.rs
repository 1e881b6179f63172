//! Anchor-free box decoding, confidence gating, NMS and Soft-NMS.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::losses::softmax;

/// Score below which Soft-NMS discards a detection.
pub const DEFAULT_SCORE_FLOOR: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: usize, confidence: f64) -> Self {
        Detection {
            bbox,
            class_id,
            confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    /// Pixels per cell.
    pub stride: f64,
}

/// Expected bin index of a softmax distribution over `0..=reg_max`.
pub fn expected_distance(side_logits: &[f64]) -> f64 {
    softmax(side_logits)
        .iter()
        .enumerate()
        .map(|(j, p)| j as f64 * p)
        .sum()
}

/// Decodes the box predicted by cell `(col, row)` from its four
/// (left, top, right, bottom) distance distributions.
///
/// Each distance is the softmax expectation over its bins, measured in
/// cells from the cell center and scaled by the grid stride.
pub fn decode_anchor_free(
    col: usize,
    row: usize,
    dist_logits: &[Vec<f64>; 4],
    grid: &GridSpec,
) -> Result<BBox> {
    if col >= grid.cols || row >= grid.rows {
        return Err(Error::invalid(format!(
            "cell ({col}, {row}) outside {}x{} grid",
            grid.cols, grid.rows
        )));
    }
    if !(grid.stride > 0.0 && grid.stride.is_finite()) {
        return Err(Error::invalid(format!("invalid stride {}", grid.stride)));
    }
    let n = dist_logits[0].len();
    if n < 2 || dist_logits.iter().any(|s| s.len() != n) {
        return Err(Error::invalid(
            "all four sides need the same number (>= 2) of distance bins",
        ));
    }
    if dist_logits.iter().flatten().any(|z| !z.is_finite()) {
        return Err(Error::invalid("non-finite distance logit"));
    }
    let [l, t, r, b] = [0, 1, 2, 3].map(|s| expected_distance(&dist_logits[s]));
    let cx = (col as f64 + 0.5) * grid.stride;
    let cy = (row as f64 + 0.5) * grid.stride;
    let s = grid.stride;
    BBox::from_corners(cx - l * s, cy - t * s, cx + r * s, cy + b * s)
}

/// Keeps detections with `confidence >= threshold`, preserving order.
pub fn confidence_filter(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.confidence >= threshold)
        .copied()
        .collect()
}

/// Indices sorted by confidence descending, then class id, then input order.
fn ranked(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| by_rank(&dets[a], &dets[b]).then(a.cmp(&b)));
    order
}

fn by_rank(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.class_id.cmp(&b.class_id))
}

/// Greedy per-class NMS: a detection survives iff its IoU with every
/// already-kept detection of the same class is below `iou_threshold`.
/// Output is sorted by descending confidence.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_impl(dets, iou_threshold, false)
}

/// Like [`nms`] but boxes of different classes also suppress each other.
pub fn nms_class_agnostic(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_impl(dets, iou_threshold, true)
}

fn nms_impl(dets: &[Detection], iou_threshold: f64, agnostic: bool) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in ranked(dets) {
        let d = dets[i];
        let suppressed = kept.iter().any(|k| {
            (agnostic || k.class_id == d.class_id) && k.bbox.iou(&d.bbox) >= iou_threshold
        });
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftNmsMethod {
    Linear,
    Gaussian,
}

impl FromStr for SoftNmsMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(SoftNmsMethod::Linear),
            "gaussian" => Ok(SoftNmsMethod::Gaussian),
            other => Err(Error::invalid(format!(
                "unknown soft-nms method {other:?} (expected linear or gaussian)"
            ))),
        }
    }
}

impl fmt::Display for SoftNmsMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SoftNmsMethod::Linear => "linear",
            SoftNmsMethod::Gaussian => "gaussian",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftNmsParams {
    pub method: SoftNmsMethod,
    /// Overlap above which the linear decay applies.
    pub iou_threshold: f64,
    /// Gaussian width; the decay is `exp(-iou^2 / sigma)`.
    pub sigma: f64,
    pub score_floor: f64,
}

impl Default for SoftNmsParams {
    fn default() -> Self {
        SoftNmsParams {
            method: SoftNmsMethod::Linear,
            iou_threshold: 0.3,
            sigma: 0.5,
            score_floor: DEFAULT_SCORE_FLOOR,
        }
    }
}

/// Soft-NMS: repeatedly selects the highest-scoring detection and decays
/// the scores of the remaining same-class detections by their overlap
/// with it. Detections whose score drops below the floor are removed.
pub fn soft_nms(dets: &[Detection], params: &SoftNmsParams) -> Result<Vec<Detection>> {
    if params.method == SoftNmsMethod::Gaussian && (params.sigma.is_nan() || params.sigma <= 0.0) {
        return Err(Error::invalid(format!(
            "gaussian soft-nms needs sigma > 0, got {}",
            params.sigma
        )));
    }
    if !(0.0..=1.0).contains(&params.iou_threshold) {
        return Err(Error::invalid(format!(
            "soft-nms threshold must be in [0, 1], got {}",
            params.iou_threshold
        )));
    }
    // (detection, input index) so ties resolve by input order
    let mut pool: Vec<(Detection, usize)> = dets
        .iter()
        .copied()
        .zip(0..)
        .filter(|(d, _)| d.confidence >= params.score_floor)
        .collect();
    let mut out = Vec::with_capacity(pool.len());
    while !pool.is_empty() {
        let best = (0..pool.len())
            .min_by(|&a, &b| by_rank(&pool[a].0, &pool[b].0).then(pool[a].1.cmp(&pool[b].1)))
            .expect("pool is non-empty");
        let (sel, _) = pool.swap_remove(best);
        out.push(sel);
        for (d, _) in pool.iter_mut() {
            if d.class_id != sel.class_id {
                continue;
            }
            let o = sel.bbox.iou(&d.bbox);
            match params.method {
                SoftNmsMethod::Linear => {
                    if o >= params.iou_threshold {
                        d.confidence *= 1.0 - o;
                    }
                }
                SoftNmsMethod::Gaussian => d.confidence *= (-(o * o) / params.sigma).exp(),
            }
        }
        pool.retain(|(d, _)| d.confidence >= params.score_floor);
    }
    out.sort_by(by_rank);
    Ok(out)
}
