//! Axis-aligned bounding boxes, IoU and the quantities that make up the
//! complete-IoU (CIoU) box loss.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Height substituted for a zero height when evaluating the aspect-ratio term.
pub const MIN_ASPECT_HEIGHT: f64 = 1e-9;

/// Axis-aligned box in center form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Checked constructor: all fields finite, width and height non-negative.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box from `(x1, y1, x2, y2)` corners.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::invalid("box corners must be finite"));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::invalid(format!(
                "inverted corners ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(BBox {
            cx: (x1 + x2) / 2.0,
            cy: (y1 + y2) / 2.0,
            w: x2 - x1,
            h: y2 - y1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite())
        {
            return Err(Error::invalid(format!("non-finite box {self:?}")));
        }
        if self.w < 0.0 || self.h < 0.0 {
            return Err(Error::invalid(format!("negative box extent {self:?}")));
        }
        Ok(())
    }

    /// `(x1, y1, x2, y2)`.
    #[inline]
    pub fn corners(&self) -> [f64; 4] {
        let hw = self.w / 2.0;
        let hh = self.h / 2.0;
        [self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh]
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Scales the box about the origin by `sx` horizontally and `sy` vertically.
    pub fn scale(&self, sx: f64, sy: f64) -> Self {
        BBox {
            cx: self.cx * sx,
            cy: self.cy * sy,
            w: self.w * sx,
            h: self.h * sy,
        }
    }

    /// Area of the overlap with `other`.
    #[inline]
    pub fn intersection(&self, other: &BBox) -> f64 {
        let [ax1, ay1, ax2, ay2] = self.corners();
        let [bx1, by1, bx2, by2] = other.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        iw * ih
    }

    /// IoU without input validation. Zero-area unions give 0.
    #[inline]
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            return 0.0;
        }
        (inter / union).clamp(0.0, 1.0)
    }
}

/// An annotated object: box plus class id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class_id: usize,
}

impl GroundTruth {
    pub fn new(bbox: BBox, class_id: usize) -> Self {
        GroundTruth { bbox, class_id }
    }
}

/// Intersection over union of two validated boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(a.iou(b))
}

/// Every sub-quantity of the CIoU loss for one (prediction, ground truth) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoUBreakdown {
    pub iou: f64,
    /// Squared distance between the two box centers.
    pub center_dist_sq: f64,
    /// Squared diagonal of the smallest box enclosing both.
    pub enclosing_diag_sq: f64,
    /// Aspect-ratio consistency term.
    pub nu: f64,
    /// Trade-off weight `nu / (1 - iou)`; 0 when `iou == 1`.
    pub alpha: f64,
}

impl IoUBreakdown {
    /// `1 - iou + center_dist_sq / enclosing_diag_sq + alpha * nu`.
    pub fn ciou_loss(&self) -> f64 {
        1.0 - self.iou + self.distance_term() + self.alpha * self.nu
    }

    pub fn distance_term(&self) -> f64 {
        self.center_dist_sq / self.enclosing_diag_sq
    }
}

/// Aspect-ratio term `(4/pi^2) (atan(w_gt/h_gt) - atan(w_pred/h_pred))^2`.
pub fn aspect_term(pred: &BBox, gt: &BBox) -> f64 {
    let d = aspect_angle(gt) - aspect_angle(pred);
    4.0 / (PI * PI) * d * d
}

#[inline]
pub(crate) fn aspect_angle(b: &BBox) -> f64 {
    (b.w / b.h.max(MIN_ASPECT_HEIGHT)).atan()
}

/// Squared enclosing diagonal; a single point (both boxes degenerate and
/// coincident) is reported as `f64::EPSILON` so the ratio stays finite.
#[inline]
pub(crate) fn enclosing_diag_sq(a: &BBox, b: &BBox) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let ew = ax2.max(bx2) - ax1.min(bx1);
    let eh = ay2.max(by2) - ay1.min(by1);
    let d = ew * ew + eh * eh;
    if d > 0.0 {
        d
    } else {
        f64::EPSILON
    }
}

pub fn ciou_breakdown(pred: &BBox, gt: &BBox) -> Result<IoUBreakdown> {
    pred.validate()?;
    gt.validate()?;
    Ok(ciou_breakdown_unchecked(pred, gt))
}

pub(crate) fn ciou_breakdown_unchecked(pred: &BBox, gt: &BBox) -> IoUBreakdown {
    let iou = pred.iou(gt);
    let dx = pred.cx - gt.cx;
    let dy = pred.cy - gt.cy;
    let nu = aspect_term(pred, gt);
    let alpha = if iou >= 1.0 { 0.0 } else { nu / (1.0 - iou) };
    IoUBreakdown {
        iou,
        center_dist_sq: dx * dx + dy * dy,
        enclosing_diag_sq: enclosing_diag_sq(pred, gt),
        nu,
        alpha,
    }
}
