//! Training-time geometric and intensity augmentation of an image/label pair.

use dins_core::volume::{Mask, Volume};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Flip each axis with probability 1/2.
    pub flip: bool,
    /// Gamma exponent range applied to min-max rescaled intensities.
    pub gamma: Option<[f64; 2]>,
    /// Standard deviation of the in-plane rotation angle, degrees.
    pub rotation_std_deg: Option<f64>,
    /// In-plane zoom factor range.
    pub scale: Option<[f64; 2]>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip: true, gamma: Some([0.7, 1.5]), rotation_std_deg: Some(5.0), scale: Some([1.0, 1.25]) }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { flip: false, gamma: None, rotation_std_deg: None, scale: None }
    }

    pub fn is_disabled(&self) -> bool {
        *self == Self::disabled()
    }
}

/// One concrete draw of the random parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub flips: [bool; 3],
    pub gamma: f64,
    pub angle_deg: f64,
    pub scale: f64,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw { flips: [false; 3], gamma: 1.0, angle_deg: 0.0, scale: 1.0 };

    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let flips = if cfg.flip { [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)] } else { [false; 3] };
        let gamma = cfg.gamma.map_or(1.0, |[lo, hi]| if hi > lo { rng.random_range(lo..=hi) } else { lo });
        let angle_deg = cfg.rotation_std_deg.filter(|s| *s > 0.0).map_or(0.0, |s| Normal::new(0.0, s).expect("positive std").sample(rng));
        let scale = cfg.scale.map_or(1.0, |[lo, hi]| if hi > lo { rng.random_range(lo..=hi) } else { lo });
        Self { flips, gamma, angle_deg, scale }
    }
}

/// Draws parameters from `cfg` and applies them.
pub fn augment<R: Rng>(image: &Volume, mask: &Mask, cfg: &AugmentConfig, rng: &mut R) -> (Volume, Mask) {
    if cfg.is_disabled() {
        return (image.clone(), mask.clone());
    }
    apply(image, mask, &AugmentDraw::sample(cfg, rng))
}

/// Rotation and zoom about the in-plane center, then flips, then gamma.
pub fn apply(image: &Volume, mask: &Mask, draw: &AugmentDraw) -> (Volume, Mask) {
    let (mut image, mut mask) = if draw.angle_deg != 0.0 || draw.scale != 1.0 {
        rotate_scale(image, mask, draw.angle_deg, draw.scale)
    } else {
        (image.clone(), mask.clone())
    };
    for (axis, _) in draw.flips.iter().enumerate().filter(|(_, f)| **f) {
        image = flip(&image, axis);
        mask = flip(&mask, axis);
    }
    (gamma_transform(&image, draw.gamma), mask)
}

/// Reverses the voxel order along `axis` (0 = z, 1 = y, 2 = x).
pub fn flip<T: Copy>(g: &dins_core::volume::Grid<T>, axis: usize) -> dins_core::volume::Grid<T> {
    let [d, h, w] = g.dims().as_array();
    let src = g.data();
    let mut out = Vec::with_capacity(src.len());
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let (sz, sy, sx) = match axis {
                    0 => (d - 1 - z, y, x),
                    1 => (z, h - 1 - y, x),
                    _ => (z, y, w - 1 - x),
                };
                out.push(src[(sz * h + sy) * w + sx]);
            }
        }
    }
    g.with_data(out)
}

/// `min + (max − min)·((v − min)/(max − min))^gamma`; constant images pass through.
pub fn gamma_transform(image: &Volume, gamma: f64) -> Volume {
    let (lo, hi) = image.min_max();
    let range = hi as f64 - lo as f64;
    if gamma == 1.0 || range <= 0.0 {
        return image.clone();
    }
    image.map(|&v| {
        let t = ((v as f64 - lo as f64) / range).clamp(0.0, 1.0);
        (lo as f64 + range * t.powf(gamma)) as f32
    })
}

/// In-plane rotation by `angle_deg` and zoom by `scale` about the slice center.
/// The image is resampled bilinearly with edge clamping (the slice index is
/// unchanged, so this is the in-plane case of trilinear sampling); labels use
/// nearest-neighbor lookups and are background outside the source grid.
pub fn rotate_scale(image: &Volume, mask: &Mask, angle_deg: f64, scale: f64) -> (Volume, Mask) {
    let [d, h, w] = image.dims().as_array();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = angle_deg.to_radians().sin_cos();
    let src = image.data();
    let lab = mask.data();
    let mut img_out = Vec::with_capacity(src.len());
    let mut lab_out = Vec::with_capacity(src.len());
    for z in 0..d {
        let plane = z * h * w;
        for y in 0..h {
            for x in 0..w {
                // Inverse map: output pixel to source coordinates.
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let sy = cy + (c * dy + s * dx) / scale;
                let sx = cx + (-s * dy + c * dx) / scale;
                img_out.push(bilinear(&src[plane..plane + h * w], h, w, sy, sx));
                let (ny, nx) = (sy.round(), sx.round());
                let inside = ny >= 0.0 && nx >= 0.0 && (ny as usize) < h && (nx as usize) < w;
                lab_out.push(inside && lab[plane + ny as usize * w + nx as usize]);
            }
        }
    }
    (image.with_data(img_out), mask.with_data(lab_out))
}

fn bilinear(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    if fy == 0.0 && fx == 0.0 {
        return plane[y0 * w + x0];
    }
    let at = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}
