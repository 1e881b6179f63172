//! Composite detection loss: weighted CIoU box term, multi-label BCE
//! classification term and DFL term, each normalized by the number of
//! positive cells.

use serde::{Deserialize, Serialize};

use super::box_loss::ciou_loss_grad;
use super::classification::{bce_loss, bce_loss_grad};
use super::dfl::{dfl_loss, dfl_loss_grad};
use super::{LossWeights, MAX_REG_MAX};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Raw head outputs for one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPrediction {
    /// Pre-sigmoid class scores.
    pub class_logits: Vec<f64>,
    /// Pre-softmax distance distributions for the (left, top, right, bottom)
    /// sides, each of length `reg_max + 1`.
    pub dist_logits: [Vec<f64>; 4],
    pub decoded_box: BBox,
}

/// Ground-truth assignment of a positive cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTarget {
    pub gt_box: BBox,
    /// Continuous bin coordinate of each side distance, in `[0, reg_max]`.
    pub dfl_target: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTarget {
    /// Binary multi-label class vector.
    pub class_labels: Vec<f64>,
    /// `Some` iff the cell contains an object.
    #[serde(default)]
    pub object: Option<ObjectTarget>,
}

impl CellTarget {
    pub fn has_object(&self) -> bool {
        self.object.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    /// Unweighted sum of CIoU losses over positive cells.
    pub box_term: f64,
    /// Unweighted BCE summed over every cell and class.
    pub cls_term: f64,
    /// Unweighted DFL summed over positive cells and the four sides.
    pub dfl_term: f64,
    pub n_pos: usize,
}

/// Gradient of the composite loss for one cell. `dist_logits` is all zeros
/// and `decoded_box` is `None` for cells without an object.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrad {
    pub class_logits: Vec<f64>,
    pub dist_logits: [Vec<f64>; 4],
    pub decoded_box: Option<[f64; 4]>,
}

fn check_cells(cells: &[(CellPrediction, CellTarget)]) -> Result<(usize, usize)> {
    let (first, _) = cells
        .first()
        .ok_or_else(|| Error::invalid("composite loss needs at least one cell"))?;
    let n_classes = first.class_logits.len();
    let n_bins = first.dist_logits[0].len();
    if !(2..=MAX_REG_MAX + 1).contains(&n_bins) {
        return Err(Error::invalid(format!(
            "reg_max must be in 1..={MAX_REG_MAX}, got {}",
            n_bins as isize - 1
        )));
    }
    for (i, (p, t)) in cells.iter().enumerate() {
        if p.class_logits.len() != n_classes || t.class_labels.len() != n_classes {
            return Err(Error::invalid(format!(
                "cell {i}: expected {n_classes} classes, got {} logits / {} labels",
                p.class_logits.len(),
                t.class_labels.len()
            )));
        }
        if p.dist_logits.iter().any(|s| s.len() != n_bins) {
            return Err(Error::invalid(format!(
                "cell {i}: every side needs {n_bins} distance logits"
            )));
        }
        p.decoded_box.validate()?;
        if let Some(obj) = &t.object {
            obj.gt_box.validate()?;
        }
    }
    Ok((n_classes, n_bins))
}

/// Order-independent sum: sorting first makes the result bitwise invariant
/// under permutation of the inputs.
fn stable_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

struct CellLoss {
    cls: f64,
    bbox: f64,
    dfl: f64,
}

fn cell_loss(pred: &CellPrediction, target: &CellTarget) -> Result<CellLoss> {
    let cls = bce_loss(&pred.class_logits, &target.class_labels)?;
    let (bbox, dfl) = match &target.object {
        Some(obj) => {
            let (b, _) = ciou_loss_grad(&pred.decoded_box, &obj.gt_box)?;
            let mut d = 0.0;
            for (side, &t) in pred.dist_logits.iter().zip(&obj.dfl_target) {
                d += dfl_loss(side, t)?;
            }
            (b, d)
        }
        None => (0.0, 0.0),
    };
    Ok(CellLoss { cls, bbox, dfl })
}

/// Divisor used for every term; 1 when there are no positive cells.
fn normalizer(n_pos: usize) -> f64 {
    n_pos.max(1) as f64
}

pub fn composite_loss(
    cells: &[(CellPrediction, CellTarget)],
    weights: &LossWeights,
) -> Result<LossReport> {
    check_cells(cells)?;
    weights.validate()?;
    let per_cell = cells
        .iter()
        .map(|(p, t)| cell_loss(p, t))
        .collect::<Result<Vec<_>>>()?;
    let n_pos = cells.iter().filter(|(_, t)| t.has_object()).count();
    let box_term = stable_sum(per_cell.iter().map(|c| c.bbox).collect());
    let cls_term = stable_sum(per_cell.iter().map(|c| c.cls).collect());
    let dfl_term = stable_sum(per_cell.iter().map(|c| c.dfl).collect());
    let norm = normalizer(n_pos);
    let total = weights.lambda_box / norm * box_term
        + weights.lambda_cls / norm * cls_term
        + weights.lambda_dfl / norm * dfl_term;
    Ok(LossReport {
        total,
        box_term,
        cls_term,
        dfl_term,
        n_pos,
    })
}

/// Gradient of [`composite_loss`]'s `total` with respect to every class
/// logit, every distance logit and the decoded box of each positive cell.
pub fn composite_loss_grad(
    cells: &[(CellPrediction, CellTarget)],
    weights: &LossWeights,
) -> Result<Vec<CellGrad>> {
    let (_, n_bins) = check_cells(cells)?;
    weights.validate()?;
    let n_pos = cells.iter().filter(|(_, t)| t.has_object()).count();
    let norm = normalizer(n_pos);
    let (w_box, w_cls, w_dfl) = (
        weights.lambda_box / norm,
        weights.lambda_cls / norm,
        weights.lambda_dfl / norm,
    );

    cells
        .iter()
        .map(|(pred, target)| {
            let class_logits = bce_loss_grad(&pred.class_logits, &target.class_labels)?
                .into_iter()
                .map(|g| w_cls * g)
                .collect();
            let mut dist_logits: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n_bins]);
            let mut decoded_box = None;
            if let Some(obj) = &target.object {
                for (side, out) in dist_logits.iter_mut().enumerate() {
                    let g = dfl_loss_grad(&pred.dist_logits[side], obj.dfl_target[side])?;
                    *out = g.into_iter().map(|v| w_dfl * v).collect();
                }
                let (_, g) = ciou_loss_grad(&pred.decoded_box, &obj.gt_box)?;
                decoded_box = Some(g.map(|v| w_box * v));
            }
            Ok(CellGrad {
                class_logits,
                dist_logits,
                decoded_box,
            })
        })
        .collect()
}
