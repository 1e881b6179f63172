//! Acceptance criteria, one line of output per criterion.
//!
//! Runs without the libtest harness so the report is always printed; the
//! process exits non-zero if any criterion fails.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use detkit::augment::{mosaic, LabeledImage, MosaicSpec, Raster};
use detkit::eval::{map_50_95, EvalConfig, ImageRecord};
use detkit::formats::{
    decode_ppm, emit_annotations, encode_ppm, parse_annotations_str, read_ppm, write_ppm,
};
use detkit::gradcheck::{self, LossKind};
use detkit::losses::{
    composite_loss, fitbox, CellPrediction, CellTarget, LossWeights, ObjectTarget,
    DEFAULT_MOMENTUM,
};
use detkit::postprocess::{nms, soft_nms, Detection, SoftNmsMethod, SoftNmsParams};
use detkit::{BBox, GroundTruth};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(p: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(p)
}

fn run_eval(dir: &Path, out: &Path) -> Result<(String, i32), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_detkit"))
        .arg("eval")
        .arg("--gt")
        .arg(dir.join("labels"))
        .arg("--pred")
        .arg(dir.join("preds"))
        .arg("--classes")
        .arg(dir.join("classes.txt"))
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    Ok((
        String::from_utf8_lossy(&o.stdout).into_owned(),
        o.status.code().unwrap_or(-1),
    ))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for kind in LossKind::ALL {
        let r = gradcheck::run(kind, 100, 2024).map_err(|e| e.to_string())?;
        ensure(r.passes(1e-4), || format!("{kind}: worst {:?}", r.worst))?;
        parts.push(format!("{kind} {:.1e}", r.max_deviation()));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!("100 trials each, max deviation [{}], {secs:.2}s", parts.join(", ")))
}

fn map_oracle() -> Outcome {
    let cfg = EvalConfig::default();
    let thresholds = cfg.thresholds().map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for seed in 0..1000u64 {
        let (images, n) = oracle::micro_dataset(seed);
        let names: Vec<String> = (0..n).map(|c| c.to_string()).collect();
        let got = map_50_95(&images, &names, &cfg).map_err(|e| e.to_string())?;
        let (per_class, _, want) = oracle::map_ref(&images, n, &thresholds, false);
        for (c, w) in per_class.iter().enumerate() {
            let h = &got.classes[c].ap_per_threshold;
            ensure(h.is_some() == w.is_some(), || format!("seed {seed} class {c} presence"))?;
            for (a, b) in h.iter().flatten().zip(w.iter().flatten()) {
                worst = worst.max((a - b).abs());
            }
        }
        match (got.map50_95, want) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            other => return Err(format!("seed {seed}: {other:?}")),
        }
    }
    ensure(worst <= 1e-12, || format!("max difference {worst:e}"))?;

    let gt = BBox::from_corners(0.0, 0.0, 100.0, 100.0).unwrap();
    let det = BBox::from_corners(0.0, 0.0, 90.0, 80.0).unwrap();
    let img = ImageRecord {
        name: "one".into(),
        ground_truths: vec![GroundTruth::new(gt, 0)],
        detections: vec![Detection::new(det, 0, 0.9)],
    };
    let r = map_50_95(&[img], &["plane".into()], &cfg).map_err(|e| e.to_string())?;
    let m = r.map50_95.ok_or("fixture mAP missing")?;
    ensure(format!("{m:.6}") == "0.500000", || format!("fixture mAP50-95 {m}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (out, code) = run_eval(&fixture("single"), &dir.path().join("r.json"))?;
    ensure(code == 0 && out.contains("mAP50-95=0.500000"), || format!("cli: {out:?} exit {code}"))?;
    Ok(format!("1000 datasets, max |diff| {worst:e}; IoU-0.72 fixture mAP50-95={m:.6}"))
}

fn threshold_list() -> Outcome {
    let t = EvalConfig::default().thresholds().map_err(|e| e.to_string())?;
    let want = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];
    ensure(t == want, || format!("{t:?}"))?;
    Ok(format!("{} values, exact", t.len()))
}

fn nms_oracle() -> Outcome {
    let mut rng = SplitMix64::seed_from_u64(99);
    let mut instances = 0;
    for n in 0..=200usize {
        for _ in 0..5 {
            let dets: Vec<Detection> = (0..n)
                .map(|_| {
                    let x = rng.random_range(0.0..80.0);
                    let y = rng.random_range(0.0..80.0);
                    let b = BBox::from_corners(x, y, x + rng.random_range(2.0..40.0), y + rng.random_range(2.0..40.0)).unwrap();
                    Detection::new(b, rng.random_range(0..3), rng.random_range(0..25) as f64 / 25.0)
                })
                .collect();
            let thr = rng.random_range(0.05..0.95);
            let kept = nms(&dets, thr);
            ensure(kept == oracle::nms_ref(&dets, thr, false), || format!("mismatch at n={n}"))?;
            ensure(nms(&kept, thr) == kept, || format!("not idempotent at n={n}"))?;
            instances += 1;
        }
    }
    Ok(format!("{instances} instances, n = 0..=200, all equal and idempotent"))
}

fn soft_nms_fixtures() -> Outcome {
    let a = Detection::new(BBox::from_corners(0.0, 0.0, 10.0, 10.0).unwrap(), 0, 0.9);
    let b = Detection::new(BBox::from_corners(0.0, 0.0, 10.0, 5.0).unwrap(), 0, 0.8);
    ensure(a.bbox.iou(&b.bbox) == 0.5, || "fixture IoU is not 0.5".into())?;
    let lin = soft_nms(&[a, b], &SoftNmsParams::default()).map_err(|e| e.to_string())?;
    let gp = SoftNmsParams {
        method: SoftNmsMethod::Gaussian,
        sigma: 0.5,
        ..SoftNmsParams::default()
    };
    let gau = soft_nms(&[a, b], &gp).map_err(|e| e.to_string())?;
    let (l, g) = (lin[1].confidence, gau[1].confidence);
    let g_want = 0.8 * (-0.5f64).exp();
    ensure((l - 0.40).abs() <= 1e-9, || format!("linear {l}"))?;
    ensure((g - g_want).abs() <= 1e-9, || format!("gaussian {g}"))?;
    Ok(format!("linear {l:.9}, gaussian {g:.9} (0.8*exp(-0.5) = {g_want:.9})"))
}

fn fitbox_convergence() -> Outcome {
    let init = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let gt = BBox::new(1.0, 1.0, 2.0, 2.0).unwrap();
    let traj = fitbox(&init, &gt, 0.05, 0.9, 2000).map_err(|e| e.to_string())?;
    let (first, last) = (traj[0], *traj.last().unwrap());
    ensure(last.iou >= 0.99, || format!("final IoU {}", last.iou))?;
    ensure(last.step <= 2000, || format!("step {}", last.step))?;
    ensure(last.loss < first.loss, || format!("loss {} -> {}", first.loss, last.loss))?;
    Ok(format!(
        "IoU {:.6} at step {}, loss {:.4} -> {:.6}",
        last.iou, last.step, first.loss, last.loss
    ))
}

fn loss_cell(k: usize, positive: bool) -> (CellPrediction, CellTarget) {
    let f = |j: usize| ((k * 7 + j * 13) % 17) as f64 / 17.0;
    (
        CellPrediction {
            class_logits: vec![f(1) * 4.0 - 2.0, f(2) * 4.0 - 2.0, f(3) * 4.0 - 2.0],
            dist_logits: std::array::from_fn(|s| (0..17).map(|b| f(s * 17 + b)).collect()),
            decoded_box: BBox::new(f(4) * 10.0, f(5) * 10.0, 1.0 + f(6) * 3.0, 1.0 + f(7) * 3.0).unwrap(),
        },
        CellTarget {
            class_labels: vec![1.0, 0.0, (k % 2) as f64],
            object: positive.then(|| ObjectTarget {
                gt_box: BBox::new(f(8) * 10.0, f(9) * 10.0, 1.0 + f(10) * 3.0, 1.0 + f(11) * 3.0).unwrap(),
                dfl_target: [f(12) * 16.0, f(13) * 16.0, f(14) * 16.0, f(15) * 16.0],
            }),
        },
    )
}

fn composite_linearity() -> Outcome {
    let cells: Vec<_> = (0..8).map(|k| loss_cell(k, k % 3 != 0)).collect();
    let w = LossWeights::default();
    let w2 = LossWeights {
        lambda_box: 2.0 * w.lambda_box,
        ..w
    };
    let a = composite_loss(&cells, &w).map_err(|e| e.to_string())?;
    let b = composite_loss(&cells, &w2).map_err(|e| e.to_string())?;
    let n = a.n_pos as f64;
    let (ca, cb) = (w.lambda_box / n * a.box_term, w2.lambda_box / n * b.box_term);
    ensure(cb == 2.0 * ca, || format!("box contribution {ca} -> {cb}"))?;
    ensure(a.cls_term == b.cls_term && a.dfl_term == b.dfl_term, || "other terms moved".into())?;

    let empty: Vec<_> = (0..5).map(|k| loss_cell(k, false)).collect();
    let r = composite_loss(&empty, &w).map_err(|e| e.to_string())?;
    ensure(r.n_pos == 0 && r.total.is_finite(), || format!("{r:?}"))?;
    Ok(format!(
        "box contribution {ca:.6} -> {cb:.6} (exactly 2x); N_pos = 0 total {:.6}",
        r.total
    ))
}

const COLORS: [[u8; 3]; 4] = [[230, 25, 75], [60, 180, 75], [0, 130, 200], [255, 225, 25]];

fn mosaic_checks() -> Outcome {
    // determinism on textured inputs with labels
    let mut rng = SplitMix64::seed_from_u64(5);
    let textured: Vec<LabeledImage> = (0..4)
        .map(|i| {
            let (w, h) = (rng.random_range(20..400), rng.random_range(20..400));
            let data = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
            let labels = (0..6)
                .map(|_| {
                    let x = rng.random_range(0.0..w as f64 - 2.0);
                    let y = rng.random_range(0.0..h as f64 - 2.0);
                    let b = BBox::from_corners(x, y, rng.random_range(x + 1.0..=w as f64), rng.random_range(y + 1.0..=h as f64)).unwrap();
                    GroundTruth::new(b, i)
                })
                .collect();
            LabeledImage {
                pixels: Raster::from_data(w, h, data).unwrap(),
                labels,
            }
        })
        .collect();
    let mut n_labels = 0;
    for seed in 0..50u64 {
        let spec = MosaicSpec::with_random_split(256, seed);
        let a = mosaic(&textured, &spec).map_err(|e| e.to_string())?;
        let b = mosaic(&textured, &spec).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("seed {seed} not reproducible"))?;
        let quads = spec.quadrants().map_err(|e| e.to_string())?;
        for g in &a.labels {
            let (qx, qy, qw, qh) = quads[g.class_id];
            let [x1, y1, x2, y2] = g.bbox.corners();
            let eps = 1e-9;
            ensure(
                x1 >= qx as f64 - eps && y1 >= qy as f64 - eps && x2 <= (qx + qw) as f64 + eps && y2 <= (qy + qh) as f64 + eps,
                || format!("seed {seed}: label {:?} leaves quadrant {:?}", g.bbox.corners(), quads[g.class_id]),
            )?;
        }
        n_labels += a.labels.len();
    }

    // provenance: four constant colors give exactly four solid rectangles
    let solid: Vec<LabeledImage> = [(300, 200), (50, 60), (640, 480), (128, 128)]
        .iter()
        .zip(COLORS)
        .map(|(&(w, h), c)| LabeledImage {
            pixels: Raster::filled(w, h, c),
            labels: vec![],
        })
        .collect();
    let spec = MosaicSpec::with_random_split(320, 11);
    let out = mosaic(&solid, &spec).map_err(|e| e.to_string())?;
    let quads = spec.quadrants().map_err(|e| e.to_string())?;
    for y in 0..out.pixels.height {
        for x in 0..out.pixels.width {
            let q = quads
                .iter()
                .position(|&(qx, qy, qw, qh)| x >= qx && x < qx + qw && y >= qy && y < qy + qh)
                .ok_or("pixel outside every quadrant")?;
            ensure(out.pixels.pixel(x, y) == COLORS[q], || format!("pixel ({x},{y}) wrong color"))?;
        }
    }
    Ok(format!(
        "50 seeds reproducible, {n_labels} labels inside their quadrants, 4 solid rectangles"
    ))
}

fn format_round_trips() -> Outcome {
    // annotation parse -> emit -> parse is a fixed point
    let mut rng = SplitMix64::seed_from_u64(17);
    let p = Path::new("mem.txt");
    for _ in 0..500 {
        let (w, h) = (rng.random_range(1..4000) as f64, rng.random_range(1..4000) as f64);
        let text: String = (0..rng.random_range(0..8))
            .map(|_| {
                let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..=1.0));
                format!("{} {} {} {} {}\n", rng.random_range(0..9), v[0], v[1], v[2], v[3])
            })
            .collect();
        let first = parse_annotations_str(&text, p, w, h, None).map_err(|e| e.to_string())?;
        let emitted = emit_annotations(&first, w, h);
        let second = parse_annotations_str(&emitted, p, w, h, None).map_err(|e| e.to_string())?;
        ensure(emit_annotations(&second, w, h) == emitted, || format!("not a fixed point: {text:?}"))?;
    }

    // PPM read -> write is byte-identical
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for k in 0..20 {
        let (w, h) = (rng.random_range(1..64), rng.random_range(1..64));
        let data = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
        let bytes = encode_ppm(&Raster::from_data(w, h, data).unwrap());
        let (a, b) = (dir.path().join(format!("{k}a.ppm")), dir.path().join(format!("{k}b.ppm")));
        fs::write(&a, &bytes).map_err(|e| e.to_string())?;
        write_ppm(&b, &read_ppm(&a).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(fs::read(&b).map_err(|e| e.to_string())? == bytes, || "PPM bytes changed".into())?;
        decode_ppm(&bytes, &a).map_err(|e| e.to_string())?;
    }

    // eval CLI on the golden dataset reproduces the committed report
    let golden = fixture("golden");
    let out = dir.path().join("report.json");
    let (stdout, code) = run_eval(&golden, &out)?;
    ensure(code == 0, || format!("eval exit {code}"))?;
    let got = fs::read(&out).map_err(|e| e.to_string())?;
    let want = fs::read(golden.join("expected_report.json")).map_err(|e| e.to_string())?;
    ensure(got == want, || "golden report differs".into())?;
    Ok(format!(
        "500 annotation files, 20 PPMs, golden report byte-identical ({})",
        stdout.trim()
    ))
}

fn defaults() -> Outcome {
    let w = LossWeights::default();
    let got = (DEFAULT_MOMENTUM, w.weight_decay_phi, w.lambda_cls, w.lambda_box, w.lambda_dfl);
    ensure(got == (0.937, 0.01, 1.0, 5.5, 2.5), || format!("{got:?}"))?;
    Ok(format!(
        "momentum {}, weight decay {}, cls {}, box {}, dfl {}",
        got.0, got.1, got.2, got.3, got.4
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient suite", gradient_suite),
        ("mAP oracle equivalence", map_oracle),
        ("threshold list", threshold_list),
        ("NMS oracle equivalence", nms_oracle),
        ("Soft-NMS numeric fixtures", soft_nms_fixtures),
        ("fitbox convergence", fitbox_convergence),
        ("composite-loss linearity", composite_linearity),
        ("mosaic determinism and label safety", mosaic_checks),
        ("format round-trips", format_round_trips),
        ("default hyper-parameters", defaults),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
