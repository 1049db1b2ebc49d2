use rand::Rng;

use super::Sample;
use crate::raster::{BinaryMask, Plane};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    pub max_rotation_deg: f64,
    pub zoom_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            max_rotation_deg: 50.0,
            zoom_range: (0.5, 1.5),
        }
    }
}

/// One geometric draw: optional horizontal flip, then rotation about the
/// frame centre, then zoom about the centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub flip: bool,
    pub rotation_deg: f64,
    pub zoom: f64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        flip: false,
        rotation_deg: 0.0,
        zoom: 1.0,
    };

    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let flip = rng.random::<f64>() < cfg.flip_probability;
        let rotation_deg = if cfg.max_rotation_deg > 0.0 {
            rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
        } else {
            0.0
        };
        let (lo, hi) = cfg.zoom_range;
        assert!(lo > 0.0 && hi >= lo, "zoom range must be positive and ordered");
        let zoom = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        Self {
            flip,
            rotation_deg,
            zoom,
        }
    }

    /// Source coordinate (row, col) sampled for output pixel (r, c).
    fn source(&self, r: usize, c: usize, h: usize, w: usize) -> (f64, f64) {
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        let (s, co) = self.rotation_deg.to_radians().sin_cos();
        // inverse rotation, then inverse zoom
        let sy = (co * dy - s * dx) / self.zoom;
        let sx = (s * dy + co * dx) / self.zoom;
        let (sy, sx) = (sy + cy, sx + cx);
        let sx = if self.flip { w as f64 - 1.0 - sx } else { sx };
        (sy, sx)
    }

    pub fn apply_image(&self, img: &Plane<f32>) -> Plane<f32> {
        let (h, w) = (img.height(), img.width());
        Plane::from_fn(w, h, |r, c| {
            let (y, x) = self.source(r, c, h, w);
            bilinear(img, y, x)
        })
    }

    pub fn apply_mask(&self, mask: &BinaryMask) -> BinaryMask {
        let (h, w) = (mask.height(), mask.width());
        Plane::from_fn(w, h, |r, c| {
            let (y, x) = self.source(r, c, h, w);
            mask.get_checked(y.round() as isize, x.round() as isize).unwrap_or(false)
        })
    }

    pub fn apply(&self, sample: &Sample) -> Sample {
        Sample {
            id: sample.id.clone(),
            image: self.apply_image(&sample.image),
            mask: self.apply_mask(&sample.mask),
        }
    }
}

/// Bilinear lookup with zero outside the frame.
fn bilinear(img: &Plane<f32>, y: f64, x: f64) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |dy: isize, dx: isize| {
        img.get_checked(y0 as isize + dy, x0 as isize + dx).unwrap_or(0.0) as f64
    };
    let top = at(0, 0) * (1.0 - fx) + at(0, 1) * fx;
    let bottom = at(1, 0) * (1.0 - fx) + at(1, 1) * fx;
    let v = top * (1.0 - fy) + bottom * fy;
    v as f32
}

/// Draws one transform and applies it to image and mask alike. The image is
/// interpolated bilinearly; the mask by nearest neighbour, so it stays
/// two-valued without re-thresholding.
pub fn augment_online<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    Transform::sample(cfg, rng).apply(sample)
}

/// Augmented frames produced by a run: one per sample of every batch.
pub fn augmented_draws(iterations_per_epoch: usize, batch_size: usize, epochs: usize) -> usize {
    iterations_per_epoch * batch_size * epochs
}
