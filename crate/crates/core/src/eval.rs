//! Detection evaluation: greedy matching, precision, 101-point interpolated
//! AP, mAP over an IoU-threshold sweep and the confusion matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GroundTruth;
use crate::postprocess::Detection;

/// Number of recall sample points used by [`average_precision`].
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_min: f64,
    pub iou_max: f64,
    pub iou_step: f64,
    pub confusion_iou: f64,
    pub confusion_conf: f64,
    /// Require `IoU > t` for a match instead of `IoU >= t`.
    pub strict: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_min: 0.5,
            iou_max: 0.95,
            iou_step: 0.05,
            confusion_iou: 0.5,
            confusion_conf: 0.25,
            strict: false,
        }
    }
}

impl EvalConfig {
    /// IoU thresholds from `iou_min` to `iou_max` inclusive.
    ///
    /// Values are snapped to a 1e-9 grid so the defaults come out as the
    /// exact literals `0.5, 0.55, ..., 0.95`.
    pub fn thresholds(&self) -> Result<Vec<f64>> {
        let (lo, hi, step) = (self.iou_min, self.iou_max, self.iou_step);
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!(
                "IoU range must satisfy 0 < min <= max <= 1, got [{lo}, {hi}]"
            )));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::invalid(format!("IoU step must be positive, got {step}")));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        Ok((0..n)
            .map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9)
            .collect())
    }

    #[inline]
    pub fn passes(&self, iou: f64, threshold: f64) -> bool {
        if self.strict {
            iou > threshold
        } else {
            iou >= threshold
        }
    }
}

/// Outcome of matching one image's detections of one class at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Detection indices by descending confidence (input order on ties).
    pub order: Vec<usize>,
    /// `tp[i]` for detection `i` in input order.
    pub tp: Vec<bool>,
    /// Detection index that claimed each ground truth, if any.
    pub gt_match: Vec<Option<usize>>,
    pub confidences: Vec<f64>,
}

impl MatchResult {
    pub fn tp_count(&self) -> usize {
        self.tp.iter().filter(|&&t| t).count()
    }

    pub fn fp_count(&self) -> usize {
        self.tp.len() - self.tp_count()
    }

    /// `(confidence, is_tp)` in ranked order.
    pub fn scored(&self) -> Vec<ScoredDetection> {
        self.order
            .iter()
            .map(|&i| ScoredDetection {
                confidence: self.confidences[i],
                tp: self.tp[i],
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDetection {
    pub confidence: f64,
    pub tp: bool,
}

fn rank_by_confidence(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Greedy matching for a single class: detections in descending confidence
/// each claim the still-unmatched ground truth with the highest IoU that
/// passes `iou_threshold` (lowest index on ties). Inclusive unless `strict`.
pub fn match_detections(
    gts: &[GroundTruth],
    dets: &[Detection],
    iou_threshold: f64,
    strict: bool,
) -> MatchResult {
    let order = rank_by_confidence(dets);
    let mut tp = vec![false; dets.len()];
    let mut gt_match = vec![None; gts.len()];
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_match[g].is_some() {
                continue;
            }
            let iou = dets[d].bbox.iou(&gt.bbox);
            let ok = if strict {
                iou > iou_threshold
            } else {
                iou >= iou_threshold
            };
            if ok && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            gt_match[g] = Some(d);
            tp[d] = true;
        }
    }
    MatchResult {
        order,
        tp,
        gt_match,
        confidences: dets.iter().map(|d| d.confidence).collect(),
    }
}

/// `tp / (tp + fp)`, or 0 when both are 0.
pub fn precision(tp: usize, fp: usize) -> f64 {
    if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    }
}

/// 101-point interpolated average precision.
///
/// `scored` must already be in ranking order (descending confidence); it is
/// re-sorted stably so callers may also pass pooled lists. Returns `None`
/// when there is nothing to evaluate (no ground truth and no detections),
/// and 0 when there are detections but no ground truth.
pub fn average_precision(scored: &[ScoredDetection], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if scored.is_empty() { None } else { Some(0.0) };
    }
    let mut ranked = scored.to_vec();
    ranked.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    let mut recall = Vec::with_capacity(ranked.len());
    let mut prec = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for s in &ranked {
        if s.tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        prec.push(precision(tp, fp));
    }
    // monotone envelope, right to left
    for i in (1..prec.len()).rev() {
        if prec[i] > prec[i - 1] {
            prec[i - 1] = prec[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&x| x < r);
        if idx < prec.len() {
            sum += prec[idx];
        }
    }
    Some(sum / RECALL_POINTS as f64)
}

/// Ground truths and detections of one image, in a shared coordinate space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageRecord {
    pub name: String,
    pub ground_truths: Vec<GroundTruth>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub name: String,
    pub n_gt: usize,
    pub n_pred: usize,
    /// AP at every threshold; `None` when the class has neither ground truth
    /// nor predictions.
    pub ap_per_threshold: Option<Vec<f64>>,
    /// AP at the first (loosest) threshold.
    pub ap50: Option<f64>,
    /// AP averaged over the thresholds.
    pub ap50_95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_images: usize,
    pub n_gt: usize,
    pub n_pred: usize,
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassReport>,
    /// Mean over evaluated classes of AP at the first threshold.
    pub map50: Option<f64>,
    /// Mean over evaluated classes of threshold-averaged AP.
    pub map50_95: Option<f64>,
}

fn check_classes(images: &[ImageRecord], n_classes: usize) -> Result<()> {
    for img in images {
        let ids = img
            .ground_truths
            .iter()
            .map(|g| g.class_id)
            .chain(img.detections.iter().map(|d| d.class_id));
        if let Some(bad) = ids.into_iter().find(|&c| c >= n_classes) {
            return Err(Error::invalid(format!(
                "{}: class id {bad} not in class table of {n_classes} classes",
                img.name
            )));
        }
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Per-image, per-class, per-threshold match outcomes in ranked order.
fn image_matches(
    img: &ImageRecord,
    n_classes: usize,
    thresholds: &[f64],
    strict: bool,
) -> Vec<Vec<Vec<ScoredDetection>>> {
    (0..n_classes)
        .map(|c| {
            let gts: Vec<GroundTruth> = img
                .ground_truths
                .iter()
                .filter(|g| g.class_id == c)
                .copied()
                .collect();
            let dets: Vec<Detection> = img
                .detections
                .iter()
                .filter(|d| d.class_id == c)
                .copied()
                .collect();
            thresholds
                .iter()
                .map(|&t| match_detections(&gts, &dets, t, strict).scored())
                .collect()
        })
        .collect()
}

/// mAP over the configured IoU sweep, pooling detections across images.
///
/// Classes without ground truth and without predictions are left out of
/// the means. Per-image matching runs on the current rayon pool; the result
/// does not depend on the number of threads.
pub fn map_50_95(images: &[ImageRecord], class_names: &[String], cfg: &EvalConfig) -> Result<EvalReport> {
    let thresholds = cfg.thresholds()?;
    let n_classes = class_names.len();
    check_classes(images, n_classes)?;
    for img in images {
        for b in img
            .ground_truths
            .iter()
            .map(|g| &g.bbox)
            .chain(img.detections.iter().map(|d| &d.bbox))
        {
            b.validate()?;
        }
    }

    let per_image: Vec<_> = images
        .par_iter()
        .map(|img| image_matches(img, n_classes, &thresholds, cfg.strict))
        .collect();

    let mut classes = Vec::with_capacity(n_classes);
    for (c, name) in class_names.iter().enumerate() {
        let n_gt = images
            .iter()
            .flat_map(|i| &i.ground_truths)
            .filter(|g| g.class_id == c)
            .count();
        let n_pred = images
            .iter()
            .flat_map(|i| &i.detections)
            .filter(|d| d.class_id == c)
            .count();
        let aps: Option<Vec<f64>> = (0..thresholds.len())
            .map(|t| {
                let pooled: Vec<ScoredDetection> = per_image
                    .iter()
                    .flat_map(|m| m[c][t].iter().copied())
                    .collect();
                average_precision(&pooled, n_gt)
            })
            .collect();
        classes.push(ClassReport {
            class_id: c,
            name: name.clone(),
            n_gt,
            n_pred,
            ap50: aps.as_ref().map(|a| a[0]),
            ap50_95: aps.as_ref().and_then(|a| mean(a.iter().copied())),
            ap_per_threshold: aps,
        });
    }

    Ok(EvalReport {
        n_images: images.len(),
        n_gt: images.iter().map(|i| i.ground_truths.len()).sum(),
        n_pred: images.iter().map(|i| i.detections.len()).sum(),
        map50: mean(classes.iter().filter_map(|c| c.ap50)),
        map50_95: mean(classes.iter().filter_map(|c| c.ap50_95)),
        thresholds,
        classes,
    })
}

/// `(C+1) x (C+1)` counts; rows are ground-truth classes, columns predicted
/// classes, and index `C` is the background bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![vec![0; num_classes + 1]; num_classes + 1],
        }
    }

    pub fn background(&self) -> usize {
        self.num_classes
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Each row divided by its sum; all-zero rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&v| if s == 0 { 0.0 } else { v as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }
}

/// Class-agnostic greedy-by-IoU matching per image, then tallying
/// `[gt_class][pred_class]`. Detections below `cfg.confusion_conf` are ignored.
pub fn confusion_matrix(images: &[ImageRecord], num_classes: usize, cfg: &EvalConfig) -> Result<ConfusionMatrix> {
    check_classes(images, num_classes)?;
    let mut m = ConfusionMatrix::new(num_classes);
    let bg = m.background();
    for img in images {
        let dets: Vec<&Detection> = img
            .detections
            .iter()
            .filter(|d| d.confidence >= cfg.confusion_conf)
            .collect();
        let mut pairs = Vec::new();
        for (g, gt) in img.ground_truths.iter().enumerate() {
            for (d, det) in dets.iter().enumerate() {
                let iou = gt.bbox.iou(&det.bbox);
                if cfg.passes(iou, cfg.confusion_iou) {
                    pairs.push((iou, g, d));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut gt_used = vec![false; img.ground_truths.len()];
        let mut det_used = vec![false; dets.len()];
        for (_, g, d) in pairs {
            if gt_used[g] || det_used[d] {
                continue;
            }
            gt_used[g] = true;
            det_used[d] = true;
            m.counts[img.ground_truths[g].class_id][dets[d].class_id] += 1;
        }
        for (g, used) in gt_used.iter().enumerate() {
            if !used {
                m.counts[img.ground_truths[g].class_id][bg] += 1;
            }
        }
        for (d, used) in det_used.iter().enumerate() {
            if !used {
                m.counts[bg][dets[d].class_id] += 1;
            }
        }
    }
    Ok(m)
}
