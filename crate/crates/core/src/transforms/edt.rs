//! Exact Euclidean distance transform.
//!
//! Separable lower-envelope-of-parabolas pass per axis (Felzenszwalb and
//! Huttenlocher), with per-axis weights so anisotropic spacing stays exact.

use super::TransformError;
use crate::volume::{Dims, Mask, Spacing, Volume, VoxelIndex};

/// Distance from every voxel to the nearest seed. With `use_physical_spacing`
/// the distance is in millimeters, otherwise in voxel steps.
pub fn edt(
    dims: Dims,
    spacing: Spacing,
    seeds: &[VoxelIndex],
    use_physical_spacing: bool,
) -> Result<Volume, TransformError> {
    if seeds.is_empty() {
        return Err(TransformError::EmptySeeds);
    }
    let mut m = Mask::empty(dims, spacing);
    for &s in seeds {
        if !dims.contains(s) {
            return Err(TransformError::InvalidClicks(format!("seed {s:?} outside grid")));
        }
        m.set(s, true);
    }
    Ok(edt_mask(&m, use_physical_spacing).expect("mask has seeds"))
}

/// Distance from every voxel to the nearest set voxel of `m`; `None` for an empty mask.
pub fn edt_mask(m: &Mask, use_physical_spacing: bool) -> Option<Volume> {
    let sq = squared_edt_mask(m, use_physical_spacing)?;
    Some(m.with_data(sq.into_iter().map(|d| d.sqrt() as f32).collect()))
}

/// Squared distances in f64, or `None` for an empty mask.
pub fn squared_edt_mask(m: &Mask, use_physical_spacing: bool) -> Option<Vec<f64>> {
    if m.is_all_false() {
        return None;
    }
    let dims = m.dims();
    let w = if use_physical_spacing { m.spacing().as_array() } else { [1.0; 3] };
    let mut f: Vec<f64> = m.data().iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();

    let n_max = dims.depth.max(dims.height).max(dims.width);
    let mut scratch = Scratch::new(n_max);

    // x lines
    for z in 0..dims.depth {
        for y in 0..dims.height {
            let base = dims.offset(z, y, 0);
            scratch.run(&mut f, base, 1, dims.width, w[2]);
        }
    }
    // y lines
    for z in 0..dims.depth {
        for x in 0..dims.width {
            let base = dims.offset(z, 0, x);
            scratch.run(&mut f, base, dims.width, dims.height, w[1]);
        }
    }
    // z lines
    let plane = dims.height * dims.width;
    for o in 0..plane {
        scratch.run(&mut f, o, plane, dims.depth, w[0]);
    }
    Some(f)
}

struct Scratch {
    line: Vec<f64>,
    out: Vec<f64>,
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self { line: vec![0.0; n], out: vec![0.0; n], v: vec![0; n], z: vec![0.0; n + 1] }
    }

    fn run(&mut self, data: &mut [f64], base: usize, stride: usize, n: usize, weight: f64) {
        for i in 0..n {
            self.line[i] = data[base + i * stride];
        }
        if lower_envelope(&self.line[..n], weight * weight, &mut self.out, &mut self.v, &mut self.z) {
            for i in 0..n {
                data[base + i * stride] = self.out[i];
            }
        }
    }
}

/// d(p) = min_q w2·(p−q)² + f(q). Returns false when every f is infinite
/// (the line is left untouched).
fn lower_envelope(f: &[f64], w2: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) -> bool {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + w2 * (q * q) as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let fp = f[p] + w2 * (p * p) as f64;
            let s = (fq - fp) / (2.0 * w2 * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        return false;
    }
    let mut j = 0usize;
    for (p, o) in out.iter_mut().enumerate().take(n) {
        while z[j + 1] < p as f64 {
            j += 1;
        }
        let q = v[j];
        let d = p as f64 - q as f64;
        *o = w2 * d * d + f[q];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(dims: Dims, spacing: Spacing, seeds: &[VoxelIndex], physical: bool) -> Vec<f32> {
        let w = if physical { spacing.as_array() } else { [1.0; 3] };
        dims.iter()
            .map(|v| {
                seeds
                    .iter()
                    .map(|s| {
                        let dz = (v.z as f64 - s.z as f64) * w[0];
                        let dy = (v.y as f64 - s.y as f64) * w[1];
                        let dx = (v.x as f64 - s.x as f64) * w[2];
                        (dz * dz + dy * dy + dx * dx).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min) as f32
            })
            .collect()
    }

    #[test]
    fn diagonal_neighbor() {
        let d = Dims::new(3, 3, 3);
        let e = edt(d, Spacing::UNIT, &[VoxelIndex::new(0, 0, 0)], false).unwrap();
        assert!((e.at(1, 1, 1) - 3f32.sqrt()).abs() < 1e-6);
        assert_eq!(*e.at(0, 0, 0), 0.0);
    }

    #[test]
    fn physical_spacing_along_z() {
        let d = Dims::new(3, 3, 3);
        let e = edt(d, Spacing::new(6.0, 1.3, 1.3), &[VoxelIndex::new(0, 0, 0)], true).unwrap();
        assert_eq!(*e.at(1, 0, 0), 6.0);
        let e = edt(d, Spacing::new(6.0, 1.3, 1.3), &[VoxelIndex::new(0, 0, 0)], false).unwrap();
        assert_eq!(*e.at(1, 0, 0), 1.0);
    }

    #[test]
    fn empty_seeds_rejected() {
        assert!(matches!(edt(Dims::new(1, 1, 1), Spacing::UNIT, &[], false), Err(TransformError::EmptySeeds)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_brute_force(
            d in 1usize..=10, h in 1usize..=10, w in 1usize..=10,
            raw in proptest::collection::vec((0usize..100, 0usize..100, 0usize..100), 1..6),
            physical in any::<bool>(),
        ) {
            let dims = Dims::new(d, h, w);
            let spacing = Spacing::new(2.5, 1.3, 0.7);
            let seeds: Vec<VoxelIndex> = raw.iter().map(|&(z, y, x)| VoxelIndex::new(z % d, y % h, x % w)).collect();
            let fast = edt(dims, spacing, &seeds, physical).unwrap();
            let slow = brute(dims, spacing, &seeds, physical);
            for (a, b) in fast.data().iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-5 * b.max(1.0));
            }
        }
    }
}
