use serde::{Deserialize, Serialize};

use super::TransformError;
use crate::volume::{Dims, Spacing, Volume, VoxelIndex};

/// Gaussian-bump transform settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpParams {
    /// Peak value at a click.
    pub gamma: f64,
    /// Per-axis width (σz, σy, σx).
    pub sigma: [f64; 3],
    /// Bumps are exactly zero beyond `cutoff_sigmas·σ` on any axis.
    pub cutoff_sigmas: f64,
    /// Measure offsets in millimeters instead of voxel steps.
    #[serde(default)]
    pub use_physical_spacing: bool,
}

impl Default for ExpParams {
    fn default() -> Self {
        Self { gamma: 1.0, sigma: [1.0, 5.0, 5.0], cutoff_sigmas: 3.0, use_physical_spacing: false }
    }
}

impl ExpParams {
    pub fn with_sigma(sigma: [f64; 3]) -> Self {
        Self { sigma, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.gamma) || !self.sigma.iter().all(|&s| positive(s)) {
            return Err(TransformError::InvalidParams(format!(
                "gamma {} and sigma {:?} must be positive",
                self.gamma, self.sigma
            )));
        }
        if !(self.cutoff_sigmas.is_finite() && self.cutoff_sigmas >= 1.0) {
            return Err(TransformError::InvalidParams(format!(
                "cutoff_sigmas {} must be at least 1",
                self.cutoff_sigmas
            )));
        }
        Ok(())
    }

    /// Largest voxel offset per axis that can receive a non-zero contribution.
    pub fn reach(&self, spacing: Spacing) -> [usize; 3] {
        let unit = self.units(spacing);
        [0, 1, 2].map(|a| (self.cutoff_sigmas * self.sigma[a] / unit[a]).floor() as usize)
    }

    fn units(&self, spacing: Spacing) -> [f64; 3] {
        if self.use_physical_spacing {
            spacing.as_array()
        } else {
            [1.0; 3]
        }
    }
}

/// Max over seeds of `γ·exp(−Σ Δᵢ²/(2σᵢ²))`, truncated per axis. An empty
/// seed list yields an all-zero map.
pub fn expdt(
    dims: Dims,
    spacing: Spacing,
    seeds: &[VoxelIndex],
    params: &ExpParams,
) -> Result<Volume, TransformError> {
    params.validate()?;
    let mut out = Volume::zeros(dims, spacing);
    let unit = params.units(spacing);
    let reach = params.reach(spacing);
    let inv = [0, 1, 2].map(|a| 1.0 / (2.0 * params.sigma[a] * params.sigma[a]));
    let limit = [0, 1, 2].map(|a| params.cutoff_sigmas * params.sigma[a]);

    for s in seeds {
        if !dims.contains(*s) {
            return Err(TransformError::InvalidClicks(format!("seed {s:?} outside grid")));
        }
        let lo = |c: usize, r: usize| c.saturating_sub(r);
        let hi = |c: usize, r: usize, n: usize| (c + r).min(n - 1);
        for z in lo(s.z, reach[0])..=hi(s.z, reach[0], dims.depth) {
            let dz = (z as f64 - s.z as f64) * unit[0];
            if dz.abs() > limit[0] {
                continue;
            }
            let ez = dz * dz * inv[0];
            for y in lo(s.y, reach[1])..=hi(s.y, reach[1], dims.height) {
                let dy = (y as f64 - s.y as f64) * unit[1];
                if dy.abs() > limit[1] {
                    continue;
                }
                let ezy = ez + dy * dy * inv[1];
                let row = dims.offset(z, y, 0);
                for x in lo(s.x, reach[2])..=hi(s.x, reach[2], dims.width) {
                    let dx = (x as f64 - s.x as f64) * unit[2];
                    if dx.abs() > limit[2] {
                        continue;
                    }
                    let v = (params.gamma * (-(ezy + dx * dx * inv[2])).exp()) as f32;
                    let cell = &mut out.data_mut()[row + x];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_at_seed_and_closed_form_offset() {
        let dims = Dims::new(5, 20, 20);
        let seed = VoxelIndex::new(2, 5, 5);
        let p = ExpParams::with_sigma([1.5, 6.0, 6.0]);
        let e = expdt(dims, Spacing::UNIT, &[seed], &p).unwrap();
        assert_eq!(*e.get(seed), 1.0);
        let v = *e.at(2, 11, 11) as f64;
        assert!((v - (-1f64).exp()).abs() < 1e-6, "{v}");
    }

    #[test]
    fn empty_seeds_give_zeros() {
        let e = expdt(Dims::new(2, 3, 4), Spacing::UNIT, &[], &ExpParams::default()).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncated_beyond_cutoff() {
        let dims = Dims::new(1, 1, 40);
        let p = ExpParams::with_sigma([1.0, 1.0, 5.0]);
        let e = expdt(dims, Spacing::UNIT, &[VoxelIndex::new(0, 0, 0)], &p).unwrap();
        assert!(*e.at(0, 0, 15) > 0.0);
        assert_eq!(*e.at(0, 0, 16), 0.0);
    }

    #[test]
    fn physical_units() {
        let dims = Dims::new(1, 1, 10);
        let p = ExpParams { use_physical_spacing: true, ..ExpParams::with_sigma([1.0, 1.0, 2.0]) };
        let e = expdt(dims, Spacing::new(1.0, 1.0, 2.0), &[VoxelIndex::new(0, 0, 0)], &p).unwrap();
        // One voxel is 2 mm = one sigma.
        assert!((*e.at(0, 0, 1) as f64 - (-0.5f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn invalid_params() {
        let mut p = ExpParams::default();
        p.cutoff_sigmas = 0.5;
        assert!(p.validate().is_err());
        p = ExpParams::with_sigma([0.0, 1.0, 1.0]);
        assert!(p.validate().is_err());
    }
}
