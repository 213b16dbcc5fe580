//! Segmentation backends behind one interface: the network (whole volume or
//! inside boxes), the two classical baselines and two reference backends.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use dins_core::baselines::{graph_cut, random_walk, GcParams, RwParams};
use dins_core::transforms::{ClickSet, ExpParams};
use dins_core::volume::{BoundingBox, Mask, Volume, VoxelIndex};
use dins_net::{predict, Checkpoint, Model};
use serde::{Deserialize, Serialize};

use crate::boxes::{build_boxes, BoxPolicy};
use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Network on the whole volume.
    Din,
    /// Network inside boxes derived from the ground truth.
    DinBox,
    #[serde(rename = "graphcut", alias = "graph_cut")]
    GraphCut,
    #[serde(rename = "randomwalk", alias = "random_walk")]
    RandomWalk,
    /// Returns the ground truth.
    Oracle,
    /// Returns an empty mask.
    Empty,
}

impl BackendKind {
    pub const ALL: [BackendKind; 6] =
        [BackendKind::Din, BackendKind::DinBox, BackendKind::GraphCut, BackendKind::RandomWalk, BackendKind::Oracle, BackendKind::Empty];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Din => "din",
            BackendKind::DinBox => "din_box",
            BackendKind::GraphCut => "graphcut",
            BackendKind::RandomWalk => "randomwalk",
            BackendKind::Oracle => "oracle",
            BackendKind::Empty => "empty",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, BackendKind::Din | BackendKind::DinBox)
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BackendKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s || (s == "graph_cut" && *k == BackendKind::GraphCut) || (s == "random_walk" && *k == BackendKind::RandomWalk))
            .ok_or_else(|| HarnessError::Config(format!("unknown backend {s:?}")))
    }
}

/// Parameters shared by every backend.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendParams {
    pub exp: ExpParams,
    pub graphcut: GcParams,
    pub randomwalk: RwParams,
    pub boxes: BoxPolicy,
}

/// A ready-to-run backend. The network is shared, never mutated.
#[derive(Clone)]
pub struct Backend {
    pub kind: BackendKind,
    pub params: BackendParams,
    model: Option<Arc<Model>>,
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend").field("kind", &self.kind).field("params", &self.params).finish_non_exhaustive()
    }
}

/// Case data a backend may consult. Only the reference backends and the box
/// builder read `truth`.
pub struct Inputs<'a> {
    pub image: &'a Volume,
    pub truth: &'a Mask,
    pub clicks: &'a ClickSet,
}

impl Backend {
    pub fn new(kind: BackendKind, params: BackendParams, model: Option<Arc<Model>>) -> Result<Self, HarnessError> {
        if kind.needs_model() && model.is_none() {
            return Err(HarnessError::Config(format!("backend {kind} needs a checkpoint")));
        }
        Ok(Self { kind, params, model })
    }

    pub fn with_checkpoint(kind: BackendKind, params: BackendParams, checkpoint: Option<&Path>) -> Result<Self, HarnessError> {
        let model = match (kind.needs_model(), checkpoint) {
            (true, Some(p)) => Some(Arc::new(load_model(p)?)),
            (true, None) => return Err(HarnessError::Config(format!("backend {kind} needs a checkpoint"))),
            (false, _) => None,
        };
        Self::new(kind, params, model)
    }

    /// The same backend with a different guide-map σ.
    pub fn with_sigma(&self, sigma: [f64; 3]) -> Backend {
        let mut b = self.clone();
        b.params.exp.sigma = sigma;
        b
    }

    pub fn model(&self) -> Option<&Model> {
        self.model.as_deref()
    }

    pub fn segment(&self, inputs: &Inputs) -> Result<Mask, HarnessError> {
        let Inputs { image, truth, clicks } = *inputs;
        let full = BoundingBox::full(image.dims());
        Ok(match self.kind {
            BackendKind::Din => predict(self.model.as_deref().expect("checked"), image, clicks, &self.params.exp, None)?,
            BackendKind::DinBox => {
                let boxes = build_boxes(truth, &self.params.boxes);
                predict(self.model.as_deref().expect("checked"), image, clicks, &self.params.exp, Some(&boxes))?
            }
            BackendKind::GraphCut | BackendKind::RandomWalk if clicks.positives.is_empty() => Mask::empty(image.dims(), image.spacing()),
            BackendKind::GraphCut => graph_cut(image, &with_border_negatives(clicks, &full), &full, &self.params.graphcut)
                .map_err(|e| HarnessError::Backend(e.to_string()))?,
            BackendKind::RandomWalk => random_walk(image, &with_border_negatives(clicks, &full), &full, &self.params.randomwalk)
                .map_err(|e| HarnessError::Backend(e.to_string()))?
                .mask,
            BackendKind::Oracle => truth.clone(),
            BackendKind::Empty => Mask::empty(image.dims(), image.spacing()),
        })
    }
}

impl Backend {
    /// Interactive use without ground truth: user boxes restrict every
    /// backend and no boxes means the whole volume. No clicks, no prediction.
    pub fn segment_clicks(&self, image: &Volume, clicks: &ClickSet, boxes: &[BoundingBox]) -> Result<Mask, HarnessError> {
        let empty = Mask::empty(image.dims(), image.spacing());
        clicks.validate(image.dims()).map_err(|e| HarnessError::Config(e.to_string()))?;
        if clicks.is_empty() {
            return Ok(empty);
        }
        let user_boxes = (!boxes.is_empty()).then_some(boxes);
        let regions = user_boxes.map_or_else(|| vec![BoundingBox::full(image.dims())], <[BoundingBox]>::to_vec);
        match self.kind {
            BackendKind::Din | BackendKind::DinBox => {
                Ok(predict(self.model.as_deref().expect("checked"), image, clicks, &self.params.exp, user_boxes)?)
            }
            BackendKind::GraphCut | BackendKind::RandomWalk => {
                let mut out = empty;
                for b in &regions {
                    let keep = |v: &&VoxelIndex| b.contains(**v);
                    let inside = ClickSet {
                        positives: clicks.positives.iter().filter(keep).copied().collect(),
                        negatives: clicks.negatives.iter().filter(keep).copied().collect(),
                    };
                    if inside.positives.is_empty() {
                        continue;
                    }
                    let seeds = with_border_negatives(&inside, b);
                    let m = if self.kind == BackendKind::GraphCut {
                        graph_cut(image, &seeds, b, &self.params.graphcut).map_err(|e| HarnessError::Backend(e.to_string()))?
                    } else {
                        random_walk(image, &seeds, b, &self.params.randomwalk).map_err(|e| HarnessError::Backend(e.to_string()))?.mask
                    };
                    out = out.or(&m);
                }
                Ok(out)
            }
            BackendKind::Oracle => Err(HarnessError::Config("the oracle backend needs ground truth".into())),
            BackendKind::Empty => Ok(empty),
        }
    }
}

/// The box premise makes its eight corners background. They are added as
/// negative seeds (unless clicked) so the classical solvers always have both
/// seed kinds and a background intensity model that is not just the clicks.
pub fn with_border_negatives(clicks: &ClickSet, b: &BoundingBox) -> ClickSet {
    let mut out = clicks.clone();
    for z in [b.min.z, b.max.z] {
        for y in [b.min.y, b.max.y] {
            for x in [b.min.x, b.max.x] {
                let v = VoxelIndex::new(z, y, x);
                if !out.positives.contains(&v) && !out.negatives.contains(&v) {
                    out.negatives.push(v);
                }
            }
        }
    }
    out
}

pub fn load_model(path: &Path) -> Result<Model, HarnessError> {
    Ok(Checkpoint::load(path)?.into_model()?.0)
}

/// `backend@checkpoint` or a bare backend name.
#[derive(Clone, Debug, PartialEq)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub checkpoint: Option<PathBuf>,
}

impl FromStr for BackendSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('@') {
            Some((k, p)) => Ok(Self { kind: k.parse()?, checkpoint: Some(PathBuf::from(p)) }),
            None => Ok(Self { kind: s.parse()?, checkpoint: None }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dins_core::volume::{Dims, Spacing};

    #[test]
    fn names_round_trip() {
        for k in BackendKind::ALL {
            assert_eq!(k.as_str().parse::<BackendKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.as_str()));
        }
        assert!("nope".parse::<BackendKind>().is_err());
        let spec: BackendSpec = "din@model.ckpt".parse().unwrap();
        assert_eq!(spec.checkpoint.as_deref(), Some(Path::new("model.ckpt")));
    }

    #[test]
    fn network_backends_require_a_model() {
        assert!(Backend::new(BackendKind::Din, BackendParams::default(), None).is_err());
        assert!(Backend::new(BackendKind::GraphCut, BackendParams::default(), None).is_ok());
    }

    #[test]
    fn box_corners_become_background_seeds() {
        let b = BoundingBox::full(Dims::new(2, 3, 3));
        let clicks = ClickSet { positives: vec![VoxelIndex::new(0, 0, 0)], negatives: vec![] };
        let out = with_border_negatives(&clicks, &b);
        assert_eq!(out.negatives.len(), 7);
        assert!(out.validate(b.dims()).is_ok());
        let given = ClickSet { positives: vec![], negatives: vec![VoxelIndex::new(1, 1, 1), VoxelIndex::new(1, 2, 2)] };
        let out = with_border_negatives(&given, &b);
        assert_eq!(out.negatives.len(), 9);
        assert_eq!(out.negatives[..2], given.negatives[..]);
    }

    #[test]
    fn baselines_segment_a_bright_block() {
        let dims = Dims::new(2, 12, 12);
        let truth = Mask::from_vec(dims, Spacing::UNIT, dims.iter().map(|v| (3..9).contains(&v.y) && (3..9).contains(&v.x)).collect()).unwrap();
        let image = truth.map(|&t| if t { 1.0 } else { 0.1 });
        let clicks = ClickSet { positives: vec![VoxelIndex::new(0, 5, 5)], negatives: vec![] };
        for kind in [BackendKind::GraphCut, BackendKind::RandomWalk, BackendKind::Oracle] {
            let b = Backend::new(kind, BackendParams::default(), None).unwrap();
            let m = b.segment(&Inputs { image: &image, truth: &truth, clicks: &clicks }).unwrap();
            assert_eq!(m, truth, "{kind}");
        }
        let empty = Backend::new(BackendKind::Empty, BackendParams::default(), None).unwrap();
        assert!(empty.segment(&Inputs { image: &image, truth: &truth, clicks: &clicks }).unwrap().is_all_false());
    }
}
