//! Slow, independent reference implementations used as test oracles.
#![allow(dead_code)]

use detkit::eval::ImageRecord;
use detkit::postprocess::Detection;
use detkit::{BBox, GroundTruth};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

/// IoU from corner coordinates, written without using the library.
pub fn iou_ref(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ax2) = (a.cx - a.w / 2.0, a.cx + a.w / 2.0);
    let (ay1, ay2) = (a.cy - a.h / 2.0, a.cy + a.h / 2.0);
    let (bx1, bx2) = (b.cx - b.w / 2.0, b.cx + b.w / 2.0);
    let (by1, by2) = (b.cy - b.h / 2.0, b.cy + b.h / 2.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// O(n^2) NMS: rank everything, build the full IoU matrix, then walk the
/// ranking and let each surviving box strike out every lower-ranked box it
/// overlaps.
pub fn nms_ref(dets: &[Detection], thr: f64, agnostic: bool) -> Vec<Detection> {
    let n = dets.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap()
            .then(dets[a].class_id.cmp(&dets[b].class_id))
            .then(a.cmp(&b))
    });
    let m: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| iou_ref(&dets[i].bbox, &dets[j].bbox)).collect())
        .collect();
    let mut dead = vec![false; n];
    let mut out = Vec::new();
    for (r, &i) in order.iter().enumerate() {
        if dead[i] {
            continue;
        }
        out.push(dets[i]);
        for &j in &order[r + 1..] {
            let same = agnostic || dets[i].class_id == dets[j].class_id;
            if same && m[i][j] >= thr {
                dead[j] = true;
            }
        }
    }
    out
}

/// AP by definition: mean over recall levels `k/100` of the best precision
/// reached at any rank whose recall is at least that level.
fn ap_ref(outcomes: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return if outcomes.is_empty() { None } else { Some(0.0) };
    }
    let mut points = Vec::new();
    let mut tp = 0;
    for (rank, &hit) in outcomes.iter().enumerate() {
        tp += hit as usize;
        points.push((tp as f64 / n_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let level = k as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(r, _)| *r >= level)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        sum += best;
    }
    Some(sum / 101.0)
}

/// Brute-force evaluator. Returns `(per-class AP per threshold, mAP50,
/// mAP50-95)`; thresholds are taken as given.
pub fn map_ref(
    images: &[ImageRecord],
    n_classes: usize,
    thresholds: &[f64],
    strict: bool,
) -> (Vec<Option<Vec<f64>>>, Option<f64>, Option<f64>) {
    let mut per_class = Vec::new();
    for c in 0..n_classes {
        let n_gt = images
            .iter()
            .flat_map(|i| &i.ground_truths)
            .filter(|g| g.class_id == c)
            .count();
        let mut aps = Vec::new();
        for &t in thresholds {
            // (confidence, image, det index, hit)
            let mut all: Vec<(f64, usize, usize, bool)> = Vec::new();
            for (ii, img) in images.iter().enumerate() {
                let gts: Vec<&GroundTruth> =
                    img.ground_truths.iter().filter(|g| g.class_id == c).collect();
                let dets: Vec<(usize, &Detection)> = img
                    .detections
                    .iter()
                    .filter(|d| d.class_id == c)
                    .enumerate()
                    .collect();
                let mut ranked = dets.clone();
                ranked.sort_by(|a, b| {
                    b.1.confidence.partial_cmp(&a.1.confidence).unwrap().then(a.0.cmp(&b.0))
                });
                let mut taken = vec![false; gts.len()];
                for (di, d) in ranked {
                    let mut pick: Option<usize> = None;
                    let mut pick_iou = -1.0;
                    for (gi, g) in gts.iter().enumerate() {
                        let o = iou_ref(&d.bbox, &g.bbox);
                        let ok = if strict { o > t } else { o >= t };
                        if !taken[gi] && ok && o > pick_iou {
                            pick = Some(gi);
                            pick_iou = o;
                        }
                    }
                    if let Some(gi) = pick {
                        taken[gi] = true;
                    }
                    all.push((d.confidence, ii, di, pick.is_some()));
                }
            }
            all.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            let hits: Vec<bool> = all.iter().map(|x| x.3).collect();
            aps.push(ap_ref(&hits, n_gt));
        }
        per_class.push(aps.into_iter().collect::<Option<Vec<f64>>>());
    }
    let avg = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let m50 = avg(per_class.iter().flatten().map(|a| a[0]).collect());
    let m5095 = avg(
        per_class
            .iter()
            .flatten()
            .map(|a| a.iter().sum::<f64>() / a.len() as f64)
            .collect(),
    );
    (per_class, m50, m5095)
}

fn int_box(rng: &mut SplitMix64, extent: i32) -> BBox {
    let x1 = rng.random_range(0..extent - 1);
    let y1 = rng.random_range(0..extent - 1);
    let x2 = rng.random_range(x1 + 1..=extent);
    let y2 = rng.random_range(y1 + 1..=extent);
    BBox::from_corners(x1 as f64, y1 as f64, x2 as f64, y2 as f64).unwrap()
}

/// Random micro-dataset: up to 3 images with up to 6 ground truths and 6
/// detections each over up to 3 classes. Integer corners and a coarse
/// confidence grid make exact IoU ties and confidence ties common.
pub fn micro_dataset(seed: u64) -> (Vec<ImageRecord>, usize) {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let n_classes = rng.random_range(1..=3);
    let n_images = rng.random_range(1..=3);
    let images = (0..n_images)
        .map(|i| {
            let n_gt = rng.random_range(0..=6);
            let n_det = rng.random_range(0..=6);
            let ground_truths: Vec<GroundTruth> = (0..n_gt)
                .map(|_| GroundTruth::new(int_box(&mut rng, 12), rng.random_range(0..n_classes)))
                .collect();
            let mut detections: Vec<Detection> = Vec::new();
            for _ in 0..n_det {
                // most detections perturb a ground truth so matches happen
                let bbox = if !ground_truths.is_empty() && rng.random_bool(0.7) {
                    let g = ground_truths[rng.random_range(0..ground_truths.len())].bbox;
                    let [x1, y1, x2, y2] = g.corners();
                    let mut j = || rng.random_range(-1..=1) as f64;
                    let (nx1, ny1) = (x1 + j(), y1 + j());
                    let (nx2, ny2) = ((x2 + j()).max(nx1 + 1.0), (y2 + j()).max(ny1 + 1.0));
                    BBox::from_corners(nx1, ny1, nx2, ny2).unwrap()
                } else {
                    int_box(&mut rng, 12)
                };
                let conf = rng.random_range(1..=10) as f64 / 10.0;
                detections.push(Detection::new(bbox, rng.random_range(0..n_classes), conf));
            }
            ImageRecord {
                name: format!("img{i}"),
                ground_truths,
                detections,
            }
        })
        .collect();
    (images, n_classes)
}
