//! Mosaic augmentation: four labeled images tiled into one square canvas.
//!
//! The canvas is split at `(round(split_x * N), round(split_y * N))` into
//! top-left, top-right, bottom-left and bottom-right quadrants, filled from
//! input 0, 1, 2 and 3 respectively. Each quadrant receives a uniformly
//! placed crop of its input; inputs smaller than the quadrant are first
//! upscaled (nearest neighbour) to cover it. Randomness comes from a
//! SplitMix64 generator seeded with `rng_seed`, so results are identical on
//! every platform.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::geometry::{BBox, GroundTruth};

pub const DEFAULT_MOSAIC_SIZE: usize = 640;
pub const SPLIT_RANGE: (f64, f64) = (0.25, 0.75);
/// Labels whose clipped width, height or area falls below this are dropped.
pub const MIN_LABEL_EXTENT: f64 = 1.0;

/// Interleaved 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Raster {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Raster {
            width,
            height,
            data: rgb.repeat(width * height),
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "{width}x{height} RGB raster needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Raster,
    /// Boxes in absolute pixel coordinates of `pixels`.
    pub labels: Vec<GroundTruth>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosaicSpec {
    pub out_size: usize,
    pub split_x: f64,
    pub split_y: f64,
    pub rng_seed: u64,
}

impl MosaicSpec {
    /// Centered split.
    pub fn new(out_size: usize, rng_seed: u64) -> Self {
        MosaicSpec {
            out_size,
            split_x: 0.5,
            split_y: 0.5,
            rng_seed,
        }
    }

    /// Split point drawn uniformly from [`SPLIT_RANGE`] with a generator
    /// derived from `rng_seed` (independent of the crop placement stream).
    pub fn with_random_split(out_size: usize, rng_seed: u64) -> Self {
        let mut rng = SplitMix64::seed_from_u64(rng_seed ^ 0x9E37_79B9_7F4A_7C15);
        let (lo, hi) = SPLIT_RANGE;
        MosaicSpec {
            out_size,
            split_x: rng.random_range(lo..=hi),
            split_y: rng.random_range(lo..=hi),
            rng_seed,
        }
    }

    /// `(x0, y0, w, h)` of the four quadrants in TL, TR, BL, BR order.
    pub fn quadrants(&self) -> Result<[(usize, usize, usize, usize); 4]> {
        let (lo, hi) = SPLIT_RANGE;
        for s in [self.split_x, self.split_y] {
            if !(lo..=hi).contains(&s) {
                return Err(Error::invalid(format!(
                    "split fraction {s} outside [{lo}, {hi}]"
                )));
            }
        }
        let n = self.out_size;
        let sx = (self.split_x * n as f64).round() as usize;
        let sy = (self.split_y * n as f64).round() as usize;
        if sx == 0 || sy == 0 || sx >= n || sy >= n {
            return Err(Error::invalid(format!(
                "output size {n} too small for a four-way split"
            )));
        }
        Ok([
            (0, 0, sx, sy),
            (sx, 0, n - sx, sy),
            (0, sy, sx, n - sy),
            (sx, sy, n - sx, n - sy),
        ])
    }
}

pub fn mosaic(imgs: &[LabeledImage], spec: &MosaicSpec) -> Result<LabeledImage> {
    if imgs.len() != 4 {
        return Err(Error::invalid(format!(
            "mosaic needs exactly 4 images, got {}",
            imgs.len()
        )));
    }
    if let Some(small) = imgs
        .iter()
        .find(|i| i.pixels.width < 2 || i.pixels.height < 2)
    {
        return Err(Error::invalid(format!(
            "mosaic inputs must be at least 2x2, got {}x{}",
            small.pixels.width, small.pixels.height
        )));
    }
    let quads = spec.quadrants()?;
    let mut rng = SplitMix64::seed_from_u64(spec.rng_seed);
    let mut canvas = Raster::new(spec.out_size, spec.out_size);
    let mut labels = Vec::new();

    for (img, &(qx, qy, qw, qh)) in imgs.iter().zip(&quads) {
        let (w, h) = (img.pixels.width, img.pixels.height);
        // upscale (never downscale) so the input covers the quadrant
        let s = (qw as f64 / w as f64).max(qh as f64 / h as f64).max(1.0);
        let (sw, sh) = if s > 1.0 {
            (
                ((w as f64 * s).round() as usize).max(qw),
                ((h as f64 * s).round() as usize).max(qh),
            )
        } else {
            (w, h)
        };
        let ox = rng.random_range(0..=sw - qw);
        let oy = rng.random_range(0..=sh - qh);

        for y in 0..qh {
            let src_y = (oy + y) * h / sh;
            for x in 0..qw {
                let src_x = (ox + x) * w / sw;
                canvas.set_pixel(qx + x, qy + y, img.pixels.pixel(src_x, src_y));
            }
        }

        let (kx, ky) = (sw as f64 / w as f64, sh as f64 / h as f64);
        let dx = qx as f64 - ox as f64;
        let dy = qy as f64 - oy as f64;
        let (bx1, by1) = (qx as f64, qy as f64);
        let (bx2, by2) = ((qx + qw) as f64, (qy + qh) as f64);
        for gt in &img.labels {
            let [x1, y1, x2, y2] = gt.bbox.scale(kx, ky).translate(dx, dy).corners();
            let (cx1, cy1) = (x1.max(bx1), y1.max(by1));
            let (cx2, cy2) = (x2.min(bx2), y2.min(by2));
            let (cw, ch) = (cx2 - cx1, cy2 - cy1);
            if cw < MIN_LABEL_EXTENT || ch < MIN_LABEL_EXTENT || cw * ch < MIN_LABEL_EXTENT {
                continue;
            }
            labels.push(GroundTruth::new(BBox::from_corners(cx1, cy1, cx2, cy2)?, gt.class_id));
        }
    }

    Ok(LabeledImage {
        pixels: canvas,
        labels,
    })
}
