//! Classical interactive segmenters that work inside a bounding box.

mod graphcut;
mod maxflow;
mod randomwalk;

pub use graphcut::{graph_cut, GcModel, GcParams};
pub use maxflow::FlowGraph;
pub use randomwalk::{random_walk, RwModel, RwParams, RwResult};

use thiserror::Error;

use crate::transforms::{ClickSet, Polarity};
use crate::volume::{BoundingBox, Dims, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no {0} click inside the box")]
    MissingPolarity(Polarity),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("conjugate gradient did not converge in {iters} iterations (residual {residual:e})")]
    NotConverged { iters: usize, residual: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Box-local view shared by both solvers: intensities rescaled to [0, 1] and
/// per-voxel seed labels (`Some(true)` foreground).
#[derive(Clone, Debug)]
pub(crate) struct BoxProblem {
    pub bbox: BoundingBox,
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub intensity: Vec<f64>,
    pub seeds: Vec<Option<bool>>,
}

impl BoxProblem {
    pub fn new(image: &Volume, clicks: &ClickSet, bbox: &BoundingBox) -> Result<Self, BaselineError> {
        let local = image.crop(bbox)?;
        let (lo, hi) = local.min_max();
        let range = (hi - lo) as f64;
        let intensity = local
            .data()
            .iter()
            .map(|&v| if range > 0.0 { (v - lo) as f64 / range } else { 0.0 })
            .collect();
        let dims = local.dims();
        let mut seeds = vec![None; dims.len()];
        for (polarity, label) in [(Polarity::Positive, true), (Polarity::Negative, false)] {
            let mut any = false;
            for v in clicks.list(polarity) {
                if let Some(l) = bbox.to_local(*v) {
                    seeds[dims.offset(l.z, l.y, l.x)] = Some(label);
                    any = true;
                }
            }
            if !any {
                return Err(BaselineError::MissingPolarity(polarity));
            }
        }
        Ok(Self { bbox: *bbox, dims, spacing: image.spacing().as_array(), intensity, seeds })
    }

    /// Forward 6-neighbor pairs `(a, b, axis)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize, usize)> {
        let d = self.dims;
        d.iter().flat_map(|v| {
            let a = d.offset(v.z, v.y, v.x);
            [(0, v.z + 1 < d.depth), (1, v.y + 1 < d.height), (2, v.x + 1 < d.width)]
                .into_iter()
                .filter(|&(_, ok)| ok)
                .map(move |(axis, _)| {
                    let step = [d.height * d.width, d.width, 1][axis];
                    (a, a + step, axis)
                })
        })
        .collect()
    }
}
