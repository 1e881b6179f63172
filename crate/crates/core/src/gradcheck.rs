//! Finite-difference verification of the analytic loss gradients.
//!
//! Each trial draws a random instance, flattens its differentiable inputs
//! into one parameter vector and compares every analytic component `a` with
//! the central difference `n = (f(x + h) - f(x - h)) / 2h`, `h = 1e-5`.
//! The reported deviation is `|a - n| / max(|a|, |n|, 0.01)`, i.e. relative
//! for large components and absolute (scaled by 100) near zero, so a
//! tolerance of `1e-4` carries a `1e-6` absolute floor.
//!
//! The CIoU gradient holds `alpha` constant, so the numeric side does the
//! same: `alpha` is frozen at the unperturbed point.
//!
//! Instances are drawn away from the non-differentiable sets of each loss
//! (coincident box edges, ties between YOLOv1 candidate boxes).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::geometry::{ciou_breakdown_unchecked, BBox};
use crate::losses::{
    bce_loss, bce_loss_grad, ciou_loss_grad, composite_loss_grad, dfl_loss, dfl_loss_grad,
    responsible_margin, yolov1_loss, yolov1_loss_grad, CellPrediction, CellTarget, LossWeights,
    ObjectTarget, Yolo1Config, Yolo1Object, Yolo1Target,
};

pub const FD_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the deviation metric.
pub const DEVIATION_FLOOR: f64 = 0.01;
/// Minimum distance kept between box edges that would create a kink.
const EDGE_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Ciou,
    Bce,
    Dfl,
    Composite,
    Yolov1,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Ciou,
        LossKind::Bce,
        LossKind::Dfl,
        LossKind::Composite,
        LossKind::Yolov1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ciou => "ciou",
            LossKind::Bce => "bce",
            LossKind::Dfl => "dfl",
            LossKind::Composite => "composite",
            LossKind::Yolov1 => "yolov1",
        }
    }

    /// Parameter groups reported for this loss, in output order.
    pub fn groups(self) -> &'static [&'static str] {
        match self {
            LossKind::Ciou => &["cx", "cy", "w", "h"],
            LossKind::Bce => &["logits"],
            LossKind::Dfl => &["logits"],
            LossKind::Composite => &["class_logits", "dist_logits", "decoded_box"],
            LossKind::Yolov1 => &["xy", "wh", "confidence", "class"],
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown loss {s:?} (expected ciou, bce, dfl, composite or yolov1)"
                ))
            })
    }
}

pub fn deviation(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(DEVIATION_FLOOR);
    (analytic - numeric).abs() / scale
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += FD_STEP;
    let mut xm = x.to_vec();
    xm[i] -= FD_STEP;
    (f(&xp) - f(&xm)) / (2.0 * FD_STEP)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStat {
    pub name: &'static str,
    pub components: usize,
    pub max_deviation: f64,
}

/// The single component with the largest deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Offender {
    pub trial: usize,
    pub group: &'static str,
    /// Index into the flattened parameter vector of the trial.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub loss: LossKind,
    pub trials: usize,
    pub groups: Vec<GroupStat>,
    pub worst: Option<Offender>,
}

impl GradcheckReport {
    pub fn max_deviation(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.deviation)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_deviation() <= tol
    }

    fn new(loss: LossKind, trials: usize) -> Self {
        GradcheckReport {
            loss,
            trials,
            groups: loss
                .groups()
                .iter()
                .map(|&name| GroupStat {
                    name,
                    components: 0,
                    max_deviation: 0.0,
                })
                .collect(),
            worst: None,
        }
    }

    fn record(&mut self, trial: usize, group: usize, index: usize, analytic: f64, numeric: f64) {
        let d = deviation(analytic, numeric);
        let g = &mut self.groups[group];
        g.components += 1;
        g.max_deviation = g.max_deviation.max(d);
        // NaN deviations must win so they are never hidden
        if self.worst.as_ref().is_none_or(|w| d.is_nan() || d > w.deviation) {
            self.worst = Some(Offender {
                trial,
                group: g.name,
                index,
                analytic,
                numeric,
                deviation: d,
            });
        }
    }

    fn compare(
        &mut self,
        trial: usize,
        x: &[f64],
        groups: &[usize],
        analytic: &[f64],
        f: impl Fn(&[f64]) -> f64,
    ) {
        for i in 0..x.len() {
            let n = central_difference(&f, x, i);
            self.record(trial, groups[i], i, analytic[i], n);
        }
    }
}

/// Runs `trials` random instances of `loss`, seeded by `seed`.
pub fn run(loss: LossKind, trials: usize, seed: u64) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut report = GradcheckReport::new(loss, trials);
    for t in 0..trials {
        match loss {
            LossKind::Ciou => ciou_trial(&mut rng, t, &mut report)?,
            LossKind::Bce => bce_trial(&mut rng, t, &mut report)?,
            LossKind::Dfl => dfl_trial(&mut rng, t, &mut report)?,
            LossKind::Composite => composite_trial(&mut rng, t, &mut report)?,
            LossKind::Yolov1 => yolov1_trial(&mut rng, t, &mut report)?,
        }
    }
    Ok(report)
}

fn random_box(rng: &mut SplitMix64) -> BBox {
    BBox {
        cx: rng.random_range(-2.0..2.0),
        cy: rng.random_range(-2.0..2.0),
        w: rng.random_range(0.2..3.0),
        h: rng.random_range(0.2..3.0),
    }
}

fn edges_separated(a: &BBox, b: &BBox) -> bool {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    [(ax1, ax2, bx1, bx2), (ay1, ay2, by1, by2)]
        .iter()
        .all(|&(a1, a2, b1, b2)| {
            [a1, a2]
                .iter()
                .all(|&p| (p - b1).abs() > EDGE_MARGIN && (p - b2).abs() > EDGE_MARGIN)
        })
}

/// Box pair whose loss is differentiable in a neighbourhood of the prediction.
fn random_box_pair(rng: &mut SplitMix64) -> (BBox, BBox) {
    loop {
        let (pred, gt) = (random_box(rng), random_box(rng));
        if edges_separated(&pred, &gt) {
            return (pred, gt);
        }
    }
}

/// CIoU loss with the aspect weight held at `alpha`.
fn frozen_ciou(p: &[f64], gt: &BBox, alpha: f64) -> f64 {
    let pred = BBox {
        cx: p[0],
        cy: p[1],
        w: p[2],
        h: p[3],
    };
    let br = ciou_breakdown_unchecked(&pred, gt);
    1.0 - br.iou + br.distance_term() + alpha * br.nu
}

fn box_params(b: &BBox) -> [f64; 4] {
    [b.cx, b.cy, b.w, b.h]
}

fn ciou_trial(rng: &mut SplitMix64, trial: usize, report: &mut GradcheckReport) -> Result<()> {
    let (pred, gt) = random_box_pair(rng);
    let alpha = ciou_breakdown_unchecked(&pred, &gt).alpha;
    let (_, g) = ciou_loss_grad(&pred, &gt)?;
    report.compare(trial, &box_params(&pred), &[0, 1, 2, 3], &g, |p| {
        frozen_ciou(p, &gt, alpha)
    });
    Ok(())
}

fn labels(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| f64::from(rng.random_bool(0.5) as u8)).collect()
}

fn logits(rng: &mut SplitMix64, n: usize, span: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-span..span)).collect()
}

fn bce_trial(rng: &mut SplitMix64, trial: usize, report: &mut GradcheckReport) -> Result<()> {
    let n = rng.random_range(1..=8);
    let x = logits(rng, n, 8.0);
    let y = labels(rng, n);
    let g = bce_loss_grad(&x, &y)?;
    report.compare(trial, &x, &vec![0; n], &g, |z| {
        bce_loss(z, &y).expect("shape fixed")
    });
    Ok(())
}

fn dfl_trial(rng: &mut SplitMix64, trial: usize, report: &mut GradcheckReport) -> Result<()> {
    let reg_max = rng.random_range(1..=16usize);
    let x = logits(rng, reg_max + 1, 4.0);
    let target = rng.random_range(0.0..=reg_max as f64);
    let g = dfl_loss_grad(&x, target)?;
    report.compare(trial, &x, &vec![0; x.len()], &g, |z| {
        dfl_loss(z, target).expect("shape fixed")
    });
    Ok(())
}

struct CompositeShape {
    n_classes: usize,
    n_bins: usize,
}

impl CompositeShape {
    fn cell_len(&self) -> usize {
        self.n_classes + 4 * self.n_bins + 4
    }
}

fn flatten_cells(cells: &[(CellPrediction, CellTarget)]) -> Vec<f64> {
    let mut x = Vec::new();
    for (p, _) in cells {
        x.extend_from_slice(&p.class_logits);
        for side in &p.dist_logits {
            x.extend_from_slice(side);
        }
        x.extend_from_slice(&box_params(&p.decoded_box));
    }
    x
}

/// Composite total recomputed from its parts, with each positive cell's
/// CIoU weight frozen at `alphas[i]`.
fn composite_reference(
    x: &[f64],
    cells: &[(CellPrediction, CellTarget)],
    alphas: &[f64],
    shape: &CompositeShape,
    w: &LossWeights,
) -> f64 {
    let n_pos = cells.iter().filter(|(_, t)| t.has_object()).count();
    let norm = n_pos.max(1) as f64;
    let mut total = 0.0;
    for (i, (_, target)) in cells.iter().enumerate() {
        let v = &x[i * shape.cell_len()..(i + 1) * shape.cell_len()];
        let (cls, rest) = v.split_at(shape.n_classes);
        total += w.lambda_cls / norm * bce_loss(cls, &target.class_labels).expect("shape fixed");
        if let Some(obj) = &target.object {
            for side in 0..4 {
                let z = &rest[side * shape.n_bins..(side + 1) * shape.n_bins];
                total += w.lambda_dfl / norm * dfl_loss(z, obj.dfl_target[side]).expect("shape fixed");
            }
            total += w.lambda_box / norm * frozen_ciou(&rest[4 * shape.n_bins..], &obj.gt_box, alphas[i]);
        }
    }
    total
}

fn composite_trial(rng: &mut SplitMix64, trial: usize, report: &mut GradcheckReport) -> Result<()> {
    let shape = CompositeShape {
        n_classes: rng.random_range(1..=4),
        n_bins: rng.random_range(2..=9),
    };
    let n_cells = rng.random_range(1..=6);
    let weights = LossWeights::default();
    let mut cells = Vec::with_capacity(n_cells);
    let mut alphas = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let (pred_box, gt_box) = random_box_pair(rng);
        let positive = rng.random_bool(0.5);
        let pred = CellPrediction {
            class_logits: logits(rng, shape.n_classes, 6.0),
            dist_logits: std::array::from_fn(|_| logits(rng, shape.n_bins, 4.0)),
            decoded_box: pred_box,
        };
        let reg_max = (shape.n_bins - 1) as f64;
        let object = positive.then(|| ObjectTarget {
            gt_box,
            dfl_target: std::array::from_fn(|_| rng.random_range(0.0..=reg_max)),
        });
        alphas.push(ciou_breakdown_unchecked(&pred_box, &gt_box).alpha);
        let target = CellTarget {
            class_labels: labels(rng, shape.n_classes),
            object,
        };
        cells.push((pred, target));
    }

    let grads = composite_loss_grad(&cells, &weights)?;
    let mut analytic = Vec::new();
    let mut groups = Vec::new();
    for g in &grads {
        analytic.extend_from_slice(&g.class_logits);
        groups.extend(std::iter::repeat_n(0, shape.n_classes));
        for side in &g.dist_logits {
            analytic.extend_from_slice(side);
        }
        groups.extend(std::iter::repeat_n(1, 4 * shape.n_bins));
        analytic.extend_from_slice(&g.decoded_box.unwrap_or([0.0; 4]));
        groups.extend(std::iter::repeat_n(2, 4));
    }
    let x = flatten_cells(&cells);
    report.compare(trial, &x, &groups, &analytic, |z| {
        composite_reference(z, &cells, &alphas, &shape, &weights)
    });
    Ok(())
}

fn yolov1_instance(rng: &mut SplitMix64) -> (Yolo1Config, Yolo1Target, Vec<f64>) {
    let cfg = Yolo1Config {
        grid_s: rng.random_range(1..=3),
        boxes_b: rng.random_range(1..=3),
        classes_c: rng.random_range(1..=4),
        lambda_coord: 5.0,
        lambda_noobj: 0.5,
    };
    let target = Yolo1Target {
        cells: (0..cfg.grid_s * cfg.grid_s)
            .map(|_| {
                rng.random_bool(0.5).then(|| Yolo1Object {
                    x: rng.random_range(0.0..1.0),
                    y: rng.random_range(0.0..1.0),
                    w: rng.random_range(0.05..1.0),
                    h: rng.random_range(0.05..1.0),
                    class_id: rng.random_range(0..cfg.classes_c),
                })
            })
            .collect(),
    };
    let mut pred = Vec::with_capacity(cfg.tensor_len());
    for _ in 0..cfg.grid_s * cfg.grid_s {
        for _ in 0..cfg.boxes_b {
            pred.push(rng.random_range(0.0..1.0));
            pred.push(rng.random_range(0.0..1.0));
            pred.push(rng.random_range(0.05..1.0));
            pred.push(rng.random_range(0.05..1.0));
            pred.push(rng.random_range(0.0..1.0));
        }
        for _ in 0..cfg.classes_c {
            pred.push(rng.random_range(0.0..1.0));
        }
    }
    (cfg, target, pred)
}

fn yolov1_trial(rng: &mut SplitMix64, trial: usize, report: &mut GradcheckReport) -> Result<()> {
    let (cfg, target, pred) = loop {
        let inst = yolov1_instance(rng);
        if responsible_margin(&inst.2, &inst.1, &inst.0) > EDGE_MARGIN {
            break inst;
        }
    };
    let g = yolov1_loss_grad(&pred, &target, &cfg)?;
    let groups: Vec<usize> = (0..pred.len())
        .map(|i| {
            let k = i % cfg.cell_len();
            if k >= cfg.boxes_b * 5 {
                3
            } else {
                match k % 5 {
                    0 | 1 => 0,
                    2 | 3 => 1,
                    _ => 2,
                }
            }
        })
        .collect();
    report.compare(trial, &pred, &groups, &g, |z| {
        yolov1_loss(z, &target, &cfg).expect("shape fixed").value
    });
    Ok(())
}
