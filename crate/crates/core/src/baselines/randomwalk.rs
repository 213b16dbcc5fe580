use serde::{Deserialize, Serialize};

use super::{BaselineError, BoxProblem};
use crate::transforms::ClickSet;
use crate::volume::{BoundingBox, Mask, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RwParams {
    /// Edge weights are `exp(−beta_rw·ΔI²)` on box-normalized intensities.
    pub beta_rw: f64,
    /// Stop when every free voxel is within this of its neighbor average.
    pub cg_tolerance: f64,
    pub cg_max_iters: usize,
    /// Lower bound on edge weights; keeps the system well conditioned.
    pub min_weight: f64,
}

impl Default for RwParams {
    fn default() -> Self {
        Self { beta_rw: 90.0, cg_tolerance: 1e-8, cg_max_iters: 20_000, min_weight: 1e-6 }
    }
}

impl RwParams {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let ok = self.beta_rw > 0.0 && self.cg_tolerance > 0.0 && self.cg_max_iters > 0 && self.min_weight > 0.0;
        if !ok {
            return Err(BaselineError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RwResult {
    /// Foreground probability; zero outside the box.
    pub probability: Volume,
    pub mask: Mask,
    pub iterations: usize,
}

/// Weighted 6-neighbor graph over one box with Dirichlet seeds.
#[derive(Clone, Debug)]
pub struct RwModel {
    problem: BoxProblem,
    start: Vec<usize>,
    neighbors: Vec<(usize, f64)>,
}

impl RwModel {
    pub fn new(image: &Volume, clicks: &ClickSet, bbox: &BoundingBox, params: &RwParams) -> Result<Self, BaselineError> {
        params.validate()?;
        let problem = BoxProblem::new(image, clicks, bbox)?;
        let n = problem.dims.len();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (a, b, _) in problem.edges() {
            let di = problem.intensity[a] - problem.intensity[b];
            let w = (-params.beta_rw * di * di).exp().max(params.min_weight);
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        for list in adj {
            start.push(neighbors.len());
            neighbors.extend(list);
        }
        start.push(neighbors.len());
        Ok(Self { problem, start, neighbors })
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.neighbors[self.start[v]..self.start[v + 1]]
    }

    pub fn seeds(&self) -> &[Option<bool>] {
        &self.problem.seeds
    }

    /// Largest `|p(v) − weighted neighbor mean|` over free voxels.
    pub fn harmonic_defect(&self, p: &[f64]) -> f64 {
        (0..p.len())
            .filter(|&v| self.problem.seeds[v].is_none())
            .map(|v| {
                let (num, den) = self.neighbors(v).iter().fold((0.0, 0.0), |(n, d), &(u, w)| (n + w * p[u], d + w));
                (p[v] - num / den).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Box-local probabilities and the CG iteration count.
    pub fn solve(&self, params: &RwParams) -> Result<(Vec<f64>, usize), BaselineError> {
        let seeds = &self.problem.seeds;
        let n = seeds.len();
        let free: Vec<usize> = (0..n).filter(|&v| seeds[v].is_none()).collect();
        let mut slot = vec![usize::MAX; n];
        for (i, &v) in free.iter().enumerate() {
            slot[v] = i;
        }
        let mut p: Vec<f64> = seeds.iter().map(|s| if *s == Some(true) { 1.0 } else { 0.0 }).collect();
        if free.is_empty() {
            return Ok((p, 0));
        }

        let degree: Vec<f64> = free.iter().map(|&v| self.neighbors(v).iter().map(|e| e.1).sum()).collect();
        let rhs: Vec<f64> = free
            .iter()
            .map(|&v| self.neighbors(v).iter().filter(|e| seeds[e.0].is_some()).map(|&(u, w)| w * p[u]).sum())
            .collect();
        let apply = |x: &[f64], out: &mut [f64]| {
            for (i, &v) in free.iter().enumerate() {
                let off: f64 =
                    self.neighbors(v).iter().filter(|e| slot[e.0] != usize::MAX).map(|&(u, w)| w * x[slot[u]]).sum();
                out[i] = degree[i] * x[i] - off;
            }
        };
        let defect = |r: &[f64]| r.iter().zip(&degree).map(|(r, d)| (r / d).abs()).fold(0.0, f64::max);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        let m = free.len();
        let mut x = vec![0.0; m];
        let mut ax = vec![0.0; m];
        let mut r = rhs.clone();
        let mut z: Vec<f64> = r.iter().zip(&degree).map(|(r, d)| r / d).collect();
        let mut dir = z.clone();
        let mut rz = dot(&r, &z);
        let mut q = vec![0.0; m];
        let mut iters = 0;
        loop {
            if defect(&r) <= params.cg_tolerance {
                // Confirm against the true residual; recursive residuals drift.
                apply(&x, &mut ax);
                for i in 0..m {
                    r[i] = rhs[i] - ax[i];
                }
                if defect(&r) <= params.cg_tolerance {
                    break;
                }
                z = r.iter().zip(&degree).map(|(r, d)| r / d).collect();
                dir.clone_from(&z);
                rz = dot(&r, &z);
            }
            if iters == params.cg_max_iters {
                return Err(BaselineError::NotConverged { iters, residual: defect(&r) });
            }
            apply(&dir, &mut q);
            let alpha = rz / dot(&dir, &q);
            for i in 0..m {
                x[i] += alpha * dir[i];
                r[i] -= alpha * q[i];
                z[i] = r[i] / degree[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..m {
                dir[i] = z[i] + beta * dir[i];
            }
            iters += 1;
        }
        for (i, &v) in free.iter().enumerate() {
            p[v] = x[i];
        }
        Ok((p, iters))
    }

    pub fn to_result(&self, p: Vec<f64>, iterations: usize, image: &Volume) -> RwResult {
        let d = self.problem.dims;
        let local = Volume::from_vec(d, image.spacing(), p.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect())
            .expect("box-local length");
        let local_mask = Mask::from_vec(d, image.spacing(), p.iter().map(|&v| v >= 0.5).collect()).expect("box-local length");
        let b = &self.problem.bbox;
        RwResult {
            probability: Volume::zeros(image.dims(), image.spacing()).paste(&local, b).expect("validated box"),
            mask: Mask::empty(image.dims(), image.spacing()).paste(&local_mask, b).expect("validated box"),
            iterations,
        }
    }
}

/// Random-walker segmentation inside `bbox`.
pub fn random_walk(image: &Volume, clicks: &ClickSet, bbox: &BoundingBox, params: &RwParams) -> Result<RwResult, BaselineError> {
    let model = RwModel::new(image, clicks, bbox, params)?;
    let (p, iterations) = model.solve(params)?;
    Ok(model.to_result(p, iterations, image))
}
