//! CIoU box-regression loss and its gradient with respect to the predicted
//! box `(cx, cy, w, h)`.
//!
//! The gradient treats `alpha` as a constant, so it is the exact gradient of
//! `1 - q + d^2/rho^2 + alpha0 * nu` where `alpha0` is frozen at the
//! evaluation point.

use crate::error::Result;
use crate::geometry::{
    aspect_angle, ciou_breakdown, ciou_breakdown_unchecked, BBox, MIN_ASPECT_HEIGHT,
};

pub fn ciou_loss(pred: &BBox, gt: &BBox) -> Result<f64> {
    Ok(ciou_breakdown(pred, gt)?.ciou_loss())
}

/// Loss value and `d loss / d (cx, cy, w, h)` of the prediction.
pub fn ciou_loss_grad(pred: &BBox, gt: &BBox) -> Result<(f64, [f64; 4])> {
    pred.validate()?;
    gt.validate()?;
    let br = ciou_breakdown_unchecked(pred, gt);
    let loss = br.ciou_loss();
    if br.iou >= 1.0 {
        // exact match: zero is a subgradient of every term
        return Ok((loss, [0.0; 4]));
    }

    let [px1, py1, px2, py2] = pred.corners();
    let [gx1, gy1, gx2, gy2] = gt.corners();

    // IoU
    let iw = px2.min(gx2) - px1.max(gx1);
    let ih = py2.min(gy2) - py1.max(gy1);
    let mut d_inter = [0.0; 4];
    if iw > 0.0 && ih > 0.0 {
        let (r, l) = (ind(px2 < gx2), ind(px1 > gx1));
        let (b, t) = (ind(py2 < gy2), ind(py1 > gy1));
        // d iw / d cx = r - l, d iw / d w = (r + l) / 2
        d_inter = [
            ih * (r - l),
            iw * (b - t),
            ih * (r + l) / 2.0,
            iw * (b + t) / 2.0,
        ];
    }
    let inter = iw.max(0.0) * ih.max(0.0);
    let union = pred.area() + gt.area() - inter;
    let d_area = [0.0, 0.0, pred.h, pred.w];
    let mut d_iou = [0.0; 4];
    if union > 0.0 {
        for k in 0..4 {
            let d_union = d_area[k] - d_inter[k];
            d_iou[k] = (d_inter[k] * union - inter * d_union) / (union * union);
        }
    }

    // normalized center distance
    let ew = px2.max(gx2) - px1.min(gx1);
    let eh = py2.max(gy2) - py1.min(gy1);
    let raw_diag = ew * ew + eh * eh;
    let c2 = br.center_dist_sq;
    let rho2 = br.enclosing_diag_sq;
    let d_c2 = [2.0 * (pred.cx - gt.cx), 2.0 * (pred.cy - gt.cy), 0.0, 0.0];
    let mut d_rho2 = [0.0; 4];
    if raw_diag > 0.0 {
        let (r, l) = (ind(px2 > gx2), ind(px1 < gx1));
        let (b, t) = (ind(py2 > gy2), ind(py1 < gy1));
        d_rho2 = [
            2.0 * ew * (r - l),
            2.0 * eh * (b - t),
            2.0 * ew * (r + l) / 2.0,
            2.0 * eh * (b + t) / 2.0,
        ];
    }

    // aspect term, nu = k (theta_gt - theta_pred)^2
    let k = 4.0 / (std::f64::consts::PI * std::f64::consts::PI);
    let diff = aspect_angle(gt) - aspect_angle(pred);
    let h_eff = pred.h.max(MIN_ASPECT_HEIGHT);
    let denom = h_eff * h_eff + pred.w * pred.w;
    let d_theta_w = h_eff / denom;
    let d_theta_h = if pred.h > MIN_ASPECT_HEIGHT {
        -pred.w / denom
    } else {
        0.0
    };
    let d_nu_d_theta = -2.0 * k * diff;
    let d_nu = [0.0, 0.0, d_nu_d_theta * d_theta_w, d_nu_d_theta * d_theta_h];

    let mut grad = [0.0; 4];
    for i in 0..4 {
        let d_dist = (d_c2[i] * rho2 - c2 * d_rho2[i]) / (rho2 * rho2);
        grad[i] = -d_iou[i] + d_dist + br.alpha * d_nu[i];
    }
    Ok((loss, grad))
}

#[inline]
fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}
