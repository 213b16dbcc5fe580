//! Synthetic tumor phantoms: ellipsoidal lesions, some with a bright rim and a
//! dark core, among look-alike distractors in a noisy background.

use std::fs;
use std::path::{Path, PathBuf};

use dins_core::volume::{read_volume, write_mask, write_volume, Dims, Mask, Spacing, Volume, VolumeFormat, VoxelIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: Dims,
    pub spacing: Spacing,
    /// Inclusive range of labeled tumors per phantom.
    pub tumors: [usize; 2],
    /// Inclusive range of unlabeled look-alike blobs per phantom.
    pub distractors: [usize; 2],
    /// In-plane semi-axis range in voxels; the depth semi-axis covers the
    /// same physical length.
    pub radius: [f64; 2],
    /// Share of lesions drawn with a bright rim around a darker core.
    pub target_like_fraction: f64,
    /// Ratio of the long to the short in-plane semi-axis.
    pub elongation: [f64; 2],
    pub background: f32,
    pub lesion: f32,
    /// Core intensity of target-like lesions.
    pub core: f32,
    /// Normalized radius beyond which a target-like lesion is rim.
    pub rim_start: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: Dims::new(8, 64, 64),
            spacing: Spacing::new(6.0, 1.3, 1.3),
            tumors: [1, 1],
            distractors: [1, 2],
            radius: [6.0, 11.0],
            target_like_fraction: 0.5,
            elongation: [1.0, 1.6],
            background: 0.2,
            lesion: 1.0,
            core: 0.55,
            rim_start: 0.6,
            noise_std: 0.08,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let problem = if self.dims.is_empty() || !self.spacing.is_valid() {
            Some("dims and spacing must be positive")
        } else if self.tumors[0] > self.tumors[1] || self.distractors[0] > self.distractors[1] {
            Some("count ranges must be ordered")
        } else if !ordered(self.radius) || self.radius[0] <= 0.0 {
            Some("radius range must be positive and ordered")
        } else if !ordered(self.elongation) || self.elongation[0] < 1.0 {
            Some("elongation range must be ordered and at least 1")
        } else if !(0.0..=1.0).contains(&self.target_like_fraction) || !(0.0..1.0).contains(&self.rim_start) {
            Some("fractions must lie in [0, 1]")
        } else if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            Some("noise std must be non-negative")
        } else {
            None
        };
        match problem {
            Some(m) => Err(HarnessError::Config(m.into())),
            None => Ok(()),
        }
    }
}

/// Oriented ellipsoid in voxel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    /// Semi-axes along z, the rotated in-plane long axis and the short axis.
    pub semi_axes: [f64; 3],
    /// In-plane rotation in radians.
    pub angle: f64,
    pub target_like: bool,
}

impl Ellipsoid {
    /// Squared normalized radius of voxel `(z, y, x)`; inside when ≤ 1.
    pub fn radius2(&self, z: usize, y: usize, x: usize) -> f64 {
        let (dz, dy, dx) = (z as f64 - self.center[0], y as f64 - self.center[1], x as f64 - self.center[2]);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (dz / self.semi_axes[0]).powi(2) + (u / self.semi_axes[1]).powi(2) + (v / self.semi_axes[2]).powi(2)
    }

    fn scaled(&self, f: f64) -> Self {
        Self { semi_axes: self.semi_axes.map(|a| a * f), ..*self }
    }

    fn voxels(&self, dims: Dims) -> Vec<VoxelIndex> {
        dims.iter().filter(|v| self.radius2(v.z, v.y, v.x) <= 1.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: Volume,
    pub label: Mask,
    pub tumors: Vec<Ellipsoid>,
    pub distractors: Vec<Ellipsoid>,
}

fn draw_range<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

fn draw_count<R: Rng>(rng: &mut R, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

fn draw_ellipsoid<R: Rng>(cfg: &PhantomConfig, rng: &mut R) -> Ellipsoid {
    let [d, h, w] = cfg.dims.as_array().map(|v| v as f64);
    let r = draw_range(rng, cfg.radius);
    let long = r * draw_range(rng, cfg.elongation);
    let rz = (r * cfg.spacing.y / cfg.spacing.z).max(0.75);
    // Keep the center far enough inside that most of the lesion is visible.
    let mut margin = |extent: f64, semi: f64| {
        let m = (semi * 0.5).min((extent - 1.0) / 2.0);
        rng.random_range(m..=(extent - 1.0 - m).max(m))
    };
    let center = [margin(d, rz), margin(h, r), margin(w, r)];
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let target_like = rng.random_bool(cfg.target_like_fraction);
    Ellipsoid { center, semi_axes: [rz, long, r], angle, target_like }
}

/// One phantom; phantom `index` of a dataset uses its own random stream.
pub fn generate_phantom(cfg: &PhantomConfig, index: u64) -> Result<Phantom, HarnessError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let dims = cfg.dims;
    let n_tumors = draw_count(&mut rng, cfg.tumors);
    let n_distractors = draw_count(&mut rng, cfg.distractors);

    // Lesions are placed by rejection so that no two come close to touching.
    let mut occupied = Mask::empty(dims, cfg.spacing);
    let mut placed: Vec<Ellipsoid> = Vec::new();
    for _ in 0..n_tumors + n_distractors {
        for _ in 0..200 {
            let e = draw_ellipsoid(cfg, &mut rng);
            let halo = e.scaled(1.3).voxels(dims);
            if halo.iter().any(|v| *occupied.get(*v)) || e.voxels(dims).is_empty() {
                continue;
            }
            halo.into_iter().for_each(|v| occupied.set(v, true));
            placed.push(e);
            break;
        }
    }
    if placed.len() < n_tumors {
        return Err(HarnessError::Config(format!("phantom {index}: could not place {n_tumors} separate tumors")));
    }
    let distractors = placed.split_off(n_tumors);
    let tumors = placed;

    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut image = Vec::with_capacity(dims.len());
    let mut label = Vec::with_capacity(dims.len());
    for v in dims.iter() {
        let mut value = cfg.background;
        let mut inside_tumor = false;
        for (k, e) in tumors.iter().chain(&distractors).enumerate() {
            let r2 = e.radius2(v.z, v.y, v.x);
            if r2 <= 1.0 {
                value = if e.target_like && r2.sqrt() < cfg.rim_start { cfg.core } else { cfg.lesion };
                inside_tumor |= k < tumors.len();
            }
        }
        let n = if cfg.noise_std > 0.0 { noise.sample(&mut rng) as f32 } else { 0.0 };
        image.push(value + n);
        label.push(inside_tumor);
    }
    Ok(Phantom {
        image: Volume::from_vec(dims, cfg.spacing, image).expect("sized"),
        label: Mask::from_vec(dims, cfg.spacing, label).expect("sized"),
        tumors,
        distractors,
    })
}

pub fn generate_phantoms(cfg: &PhantomConfig, n: usize) -> Result<Vec<Phantom>, HarnessError> {
    (0..n as u64).map(|i| generate_phantom(cfg, i)).collect()
}

/// `<dir>/case_XXX_image.raw` and `<dir>/case_XXX_label.raw`, each with a JSON header.
pub fn case_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf) {
    (dir.join(format!("case_{index:03}_image.raw")), dir.join(format!("case_{index:03}_label.raw")))
}

pub fn write_dataset(dir: &Path, phantoms: &[Phantom]) -> Result<Vec<(PathBuf, PathBuf)>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
    phantoms
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (img, lab) = case_paths(dir, i);
            write_volume(&p.image, &img, VolumeFormat::RawJson)?;
            write_mask(&p.label, &lab, VolumeFormat::RawJson)?;
            Ok((img, lab))
        })
        .collect()
}

/// A labeled case loaded from disk.
#[derive(Clone, Debug)]
pub struct Case {
    pub id: String,
    pub image: Volume,
    pub label: Mask,
}

/// Loads every `case_XXX_image.raw` / `case_XXX_label.raw` pair in `dir`, sorted by name.
pub fn read_dataset(dir: &Path) -> Result<Vec<Case>, HarnessError> {
    let entries = fs::read_dir(dir).map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
    let mut images: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("_image.raw")))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(HarnessError::Config(format!("no cases found in {}", dir.display())));
    }
    images
        .into_iter()
        .map(|img| {
            let name = img.file_name().and_then(|n| n.to_str()).expect("filtered").to_string();
            let id = name.trim_end_matches("_image.raw").to_string();
            let lab = img.with_file_name(format!("{id}_label.raw"));
            let image = read_volume(&img, VolumeFormat::RawJson)?;
            let label = read_volume(&lab, VolumeFormat::RawJson)?.threshold(0.5);
            Ok(Case { id, image, label })
        })
        .collect()
}

impl From<Phantom> for Case {
    fn from(p: Phantom) -> Self {
        Case { id: String::new(), image: p.image, label: p.label }
    }
}

/// In-memory dataset with ids `case_000`, `case_001`, ...
pub fn phantom_cases(cfg: &PhantomConfig, n: usize) -> Result<Vec<Case>, HarnessError> {
    Ok(generate_phantoms(cfg, n)?
        .into_iter()
        .enumerate()
        .map(|(i, p)| Case { id: format!("case_{i:03}"), ..Case::from(p) })
        .collect())
}
