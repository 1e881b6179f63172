use detkit::augment::{mosaic, LabeledImage, MosaicSpec, Raster};
use detkit::{BBox, GroundTruth};
use proptest::prelude::*;

const COLORS: [[u8; 3]; 4] = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0]];

fn inputs(sizes: &[(usize, usize); 4], boxes: &[Vec<(f64, f64, f64, f64)>]) -> Vec<LabeledImage> {
    (0..4)
        .map(|i| {
            let (w, h) = sizes[i];
            LabeledImage {
                pixels: Raster::filled(w, h, COLORS[i]),
                labels: boxes
                    .get(i)
                    .into_iter()
                    .flatten()
                    .map(|&(fx, fy, fw, fh)| {
                        let x1 = fx * w as f64;
                        let y1 = fy * h as f64;
                        let x2 = (x1 + fw * w as f64).min(w as f64);
                        let y2 = (y1 + fh * h as f64).min(h as f64);
                        GroundTruth::new(BBox::from_corners(x1, y1, x2.max(x1), y2.max(y1)).unwrap(), i)
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Bounding rectangle of the pixels of `color`, or None.
fn color_rect(r: &Raster, color: [u8; 3]) -> Option<(usize, usize, usize, usize, usize)> {
    let (mut x1, mut y1, mut x2, mut y2, mut n) = (usize::MAX, usize::MAX, 0, 0, 0);
    for y in 0..r.height {
        for x in 0..r.width {
            if r.pixel(x, y) == color {
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
                n += 1;
            }
        }
    }
    (n > 0).then_some((x1, y1, x2, y2, n))
}

#[test]
fn four_constant_inputs_give_four_rectangles() {
    for (seed, random) in [(0u64, false), (1, true), (99, true)] {
        let spec = if random {
            MosaicSpec::with_random_split(96, seed)
        } else {
            MosaicSpec::new(96, seed)
        };
        let imgs = inputs(&[(70, 50), (20, 30), (120, 90), (48, 48)], &[]);
        let out = mosaic(&imgs, &spec).unwrap();
        let quads = spec.quadrants().unwrap();
        let mut covered = 0;
        for (i, &(qx, qy, qw, qh)) in quads.iter().enumerate() {
            let (x1, y1, x2, y2, n) = color_rect(&out.pixels, COLORS[i]).unwrap();
            assert_eq!((x1, y1, x2 - x1, y2 - y1), (qx, qy, qw, qh));
            // solid: every pixel of the rectangle has the color
            assert_eq!(n, qw * qh);
            covered += n;
        }
        assert_eq!(covered, 96 * 96);
    }
}

#[test]
fn fixed_seed_is_bitwise_reproducible() {
    let mut imgs = inputs(
        &[(200, 150), (90, 300), (64, 64), (500, 400)],
        &[
            vec![(0.1, 0.1, 0.5, 0.5)],
            vec![(0.3, 0.2, 0.4, 0.3), (0.0, 0.0, 1.0, 1.0)],
            vec![],
            vec![(0.6, 0.6, 0.3, 0.3)],
        ],
    );
    // add texture so crop offsets show up in the pixels
    for img in &mut imgs {
        for (i, v) in img.pixels.data.iter_mut().enumerate() {
            *v = v.wrapping_add((i % 251) as u8);
        }
    }
    let spec = MosaicSpec::with_random_split(160, 42);
    let a = mosaic(&imgs, &spec).unwrap();
    let b = mosaic(&imgs, &spec).unwrap();
    assert_eq!(a, b);
    let c = mosaic(&imgs, &MosaicSpec::with_random_split(160, 43)).unwrap();
    assert_ne!(a.pixels, c.pixels);
}

proptest! {
    #[test]
    fn labels_stay_inside_their_quadrant(
        seed in any::<u64>(),
        out in 16usize..200,
        sizes in prop::array::uniform4((4usize..300, 4usize..300)),
        boxes in prop::collection::vec(prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.01f64..1.0, 0.01f64..1.0), 0..5), 4),
    ) {
        let spec = MosaicSpec::with_random_split(out, seed);
        let imgs = inputs(&sizes, &boxes);
        let res = mosaic(&imgs, &spec).unwrap();
        let quads = spec.quadrants().unwrap();
        for g in &res.labels {
            // class ids were set to the source quadrant index
            let (qx, qy, qw, qh) = quads[g.class_id];
            let [x1, y1, x2, y2] = g.bbox.corners();
            prop_assert!(x1 >= qx as f64 - 1e-9 && y1 >= qy as f64 - 1e-9, "{:?} vs {:?}", g.bbox.corners(), (qx, qy));
            prop_assert!(x2 <= (qx + qw) as f64 + 1e-9 && y2 <= (qy + qh) as f64 + 1e-9);
            prop_assert!(g.bbox.w >= 1.0 && g.bbox.h >= 1.0);
        }
    }
}
