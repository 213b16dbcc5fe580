use serde::{Deserialize, Serialize};

use super::{BaselineError, BoxProblem, FlowGraph};
use crate::transforms::ClickSet;
use crate::volume::{BoundingBox, Mask, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcParams {
    /// Weight of the boundary term.
    pub lambda: f64,
    /// Intensity scale of the boundary term, on the [0, 1] box-normalized scale.
    pub sigma_int: f64,
    pub histogram_bins: usize,
}

impl Default for GcParams {
    fn default() -> Self {
        Self { lambda: 1.0, sigma_int: 0.1, histogram_bins: 16 }
    }
}

impl GcParams {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite() && self.sigma_int > 0.0 && self.histogram_bins > 0) {
            return Err(BaselineError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// The energy of one box: unary costs per voxel and label, weighted
/// 6-neighbor boundary terms, and hard seed labels.
#[derive(Clone, Debug)]
pub struct GcModel {
    problem: BoxProblem,
    /// `(cost as background, cost as foreground)` per voxel.
    pub unary: Vec<(f64, f64)>,
    /// `(a, b, weight)`, already multiplied by λ.
    pub pairwise: Vec<(usize, usize, f64)>,
}

impl GcModel {
    pub fn new(image: &Volume, clicks: &ClickSet, bbox: &BoundingBox, params: &GcParams) -> Result<Self, BaselineError> {
        params.validate()?;
        let problem = BoxProblem::new(image, clicks, bbox)?;
        let bins = params.histogram_bins;
        let bin = |v: f64| ((v * bins as f64) as usize).min(bins - 1);
        let d = problem.dims;

        // Seed histograms from the 3×3×3 neighborhood of every seed, clipped to the box.
        let mut hist = [vec![0usize; bins], vec![0usize; bins]];
        for v in d.iter() {
            let Some(label) = problem.seeds[d.offset(v.z, v.y, v.x)] else { continue };
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if let Some(n) = d.step(v, dz, dy, dx) {
                            hist[label as usize][bin(problem.intensity[d.offset(n.z, n.y, n.x)])] += 1;
                        }
                    }
                }
            }
        }
        let nll = |h: &[usize], b: usize| {
            let total: usize = h.iter().sum();
            -((h[b] as f64 + 1.0 / bins as f64) / (total as f64 + 1.0)).ln()
        };
        let unary = problem.intensity.iter().map(|&i| (nll(&hist[0], bin(i)), nll(&hist[1], bin(i)))).collect();

        let s2 = 2.0 * params.sigma_int * params.sigma_int;
        let pairwise = problem
            .edges()
            .into_iter()
            .map(|(a, b, axis)| {
                let di = problem.intensity[a] - problem.intensity[b];
                (a, b, params.lambda * (-di * di / s2).exp() / problem.spacing[axis])
            })
            .collect();
        Ok(Self { problem, unary, pairwise })
    }

    pub fn seeds(&self) -> &[Option<bool>] {
        &self.problem.seeds
    }

    /// Energy of a box-local labeling; infinite when a seed is violated.
    pub fn energy(&self, labels: &[bool]) -> f64 {
        if self.problem.seeds.iter().zip(labels).any(|(s, &l)| s.is_some_and(|s| s != l)) {
            return f64::INFINITY;
        }
        let unary: f64 = self.unary.iter().zip(labels).map(|(&(bg, fg), &l)| if l { fg } else { bg }).sum();
        let boundary: f64 = self.pairwise.iter().filter(|&&(a, b, _)| labels[a] != labels[b]).map(|e| e.2).sum();
        unary + boundary
    }

    /// Minimum-energy box-local labeling.
    pub fn solve(&self) -> Vec<bool> {
        let n = self.unary.len();
        let (s, t) = (n, n + 1);
        // Any finite cut is cheaper than one hard edge.
        let hard = 1.0
            + self.unary.iter().map(|u| u.0 + u.1).sum::<f64>()
            + self.pairwise.iter().map(|e| e.2).sum::<f64>();
        let mut g = FlowGraph::new(n + 2);
        for (v, (&(bg, fg), seed)) in self.unary.iter().zip(&self.problem.seeds).enumerate() {
            // Source side is foreground: cutting s→v labels v background.
            let (to_v, from_v) = match seed {
                Some(true) => (hard, 0.0),
                Some(false) => (0.0, hard),
                None => (bg, fg),
            };
            g.add_edge(s, v, to_v, 0.0);
            g.add_edge(v, t, from_v, 0.0);
        }
        for &(a, b, w) in &self.pairwise {
            g.add_edge(a, b, w, w);
        }
        g.max_flow(s, t);
        let mut side = g.source_side(s);
        side.truncate(n);
        side
    }

    pub fn to_mask(&self, labels: Vec<bool>, image: &Volume) -> Mask {
        let local = Mask::from_vec(self.problem.dims, image.spacing(), labels).expect("labels match the box");
        Mask::empty(image.dims(), image.spacing())
            .paste(&local, &self.problem.bbox)
            .expect("box was validated against the image")
    }
}

/// Min-cut segmentation inside `bbox`; voxels outside the box are background.
pub fn graph_cut(image: &Volume, clicks: &ClickSet, bbox: &BoundingBox, params: &GcParams) -> Result<Mask, BaselineError> {
    let model = GcModel::new(image, clicks, bbox, params)?;
    let labels = model.solve();
    Ok(model.to_mask(labels, image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::Polarity;
    use crate::volume::{Dims, Spacing, VoxelIndex};
    use rand::{Rng, SeedableRng};

    fn line(values: &[f32]) -> Volume {
        Volume::from_vec(Dims::new(1, 1, values.len()), Spacing::UNIT, values.to_vec()).unwrap()
    }

    fn clicks(pos: &[VoxelIndex], neg: &[VoxelIndex]) -> ClickSet {
        ClickSet { positives: pos.to_vec(), negatives: neg.to_vec() }
    }

    #[test]
    fn cut_at_the_intensity_step() {
        let img = line(&[0.0, 0.0, 100.0]);
        let c = clicks(&[VoxelIndex::new(0, 0, 0)], &[VoxelIndex::new(0, 0, 2)]);
        let p = GcParams { lambda: 0.01, ..Default::default() };
        let m = graph_cut(&img, &c, &BoundingBox::full(img.dims()), &p).unwrap();
        assert_eq!(m.data(), &[true, true, false]);
        // Brute force over the single free voxel.
        let model = GcModel::new(&img, &c, &BoundingBox::full(img.dims()), &p).unwrap();
        let e_fg = model.energy(&[true, true, false]);
        let e_bg = model.energy(&[true, false, false]);
        assert!(e_fg < e_bg);
    }

    #[test]
    fn fully_seeded_box_returns_seeds() {
        let img = line(&[3.0, 1.0, 4.0, 1.0]);
        let pos = [VoxelIndex::new(0, 0, 0), VoxelIndex::new(0, 0, 2)];
        let neg = [VoxelIndex::new(0, 0, 1), VoxelIndex::new(0, 0, 3)];
        let m = graph_cut(&img, &clicks(&pos, &neg), &BoundingBox::full(img.dims()), &GcParams::default()).unwrap();
        assert_eq!(m.data(), &[true, false, true, false]);
    }

    #[test]
    fn missing_polarity_is_an_error() {
        let img = line(&[0.0, 1.0]);
        let r = graph_cut(&img, &clicks(&[VoxelIndex::new(0, 0, 0)], &[]), &BoundingBox::full(img.dims()), &GcParams::default());
        assert!(matches!(r, Err(BaselineError::MissingPolarity(Polarity::Negative))));
    }

    #[test]
    fn outside_box_is_background() {
        let dims = Dims::new(1, 4, 4);
        let img = Volume::from_vec(dims, Spacing::UNIT, (0..16).map(|i| i as f32).collect()).unwrap();
        let b = BoundingBox::new(VoxelIndex::new(0, 1, 1), VoxelIndex::new(0, 2, 2)).unwrap();
        let c = clicks(&[VoxelIndex::new(0, 1, 1)], &[VoxelIndex::new(0, 2, 2)]);
        let m = graph_cut(&img, &c, &b, &GcParams::default()).unwrap();
        for v in dims.iter() {
            if !b.contains(v) {
                assert!(!*m.get(v));
            }
        }
        assert!(*m.get(VoxelIndex::new(0, 1, 1)));
    }

    #[test]
    fn exhaustive_minimum_on_small_boxes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let dims = Dims::new(2, 3, 3);
            let img = Volume::from_vec(dims, Spacing::UNIT, (0..18).map(|_| rng.random_range(0.0..10.0)).collect()).unwrap();
            let c = clicks(&[VoxelIndex::new(0, 0, 0)], &[VoxelIndex::new(1, 2, 2)]);
            let p = GcParams { lambda: rng.random_range(0.1..3.0), ..Default::default() };
            let model = GcModel::new(&img, &c, &BoundingBox::full(dims), &p).unwrap();
            let got = model.energy(&model.solve());
            let free: Vec<usize> = (0..18).filter(|&i| model.seeds()[i].is_none()).collect();
            let mut best = f64::INFINITY;
            for bits in 0..(1u32 << free.len()) {
                let mut labels: Vec<bool> = model.seeds().iter().map(|s| s.unwrap_or(false)).collect();
                for (k, &i) in free.iter().enumerate() {
                    labels[i] = bits & (1 << k) != 0;
                }
                best = best.min(model.energy(&labels));
            }
            assert!((got - best).abs() <= 1e-9 * best.max(1.0), "{got} vs {best}");
        }
    }
}
