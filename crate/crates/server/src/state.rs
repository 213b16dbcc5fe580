//! Session state as a pure fold over mutation events.

use std::sync::Arc;

use dins_core::transforms::{ClickSet, ExpParams, Polarity};
use dins_core::volume::{BoundingBox, Mask, Volume, VoxelIndex};
use dins_harness::backend::{Backend, BackendKind, BackendParams};
use dins_net::Model;
use serde::{Deserialize, Serialize};

use crate::ApiError;

/// How a session turns its inputs into a mask.
#[derive(Clone, Debug)]
pub struct Segmenter(pub Backend);

impl Segmenter {
    pub fn new(kind: BackendKind, params: BackendParams, model: Option<Arc<Model>>) -> Result<Self, ApiError> {
        if kind == BackendKind::Oracle {
            return Err(ApiError::BadRequest("the oracle backend is evaluation-only".into()));
        }
        Backend::new(kind, params, model).map(Segmenter).map_err(|e| ApiError::BadRequest(e.to_string()))
    }

    pub fn kind(&self) -> BackendKind {
        self.0.kind
    }

    pub fn segment(&self, image: &Volume, clicks: &ClickSet, boxes: &[BoundingBox], exp: &ExpParams) -> Result<Mask, ApiError> {
        self.0.with_sigma(exp.sigma).segment_clicks(image, clicks, boxes).map_err(|e| ApiError::Internal(format!("segmentation failed: {e}")))
    }
}

/// One recorded mutation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Click { polarity: Polarity, at: VoxelIndex },
    Boxes { boxes: Vec<BoundingBox> },
    Sigma { sigma: [f64; 3] },
    Undo,
    Reset,
    GroundTruth,
}

/// The inputs a prediction depends on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    /// Clicks in placement order.
    pub clicks: Vec<(Polarity, VoxelIndex)>,
    pub boxes: Vec<BoundingBox>,
    pub exp: ExpParams,
}

impl Inputs {
    pub fn click_set(&self) -> ClickSet {
        let pick = |p: Polarity| self.clicks.iter().filter(|c| c.0 == p).map(|c| c.1).collect();
        ClickSet { positives: pick(Polarity::Positive), negatives: pick(Polarity::Negative) }
    }

    /// Applies one event; errors leave `self` untouched.
    pub fn apply(&self, event: &Event, volume: &Volume) -> Result<Inputs, ApiError> {
        let dims = volume.dims();
        let mut next = self.clone();
        match event {
            Event::Click { polarity, at } => {
                if !dims.contains(*at) {
                    return Err(ApiError::BadRequest(format!("click {:?} is outside the volume {:?}", at.as_array(), dims.as_array())));
                }
                let mut set = self.click_set();
                let added = set.push(*polarity, *at).map_err(|e| ApiError::BadRequest(e.to_string()))?;
                if !added {
                    return Err(ApiError::BadRequest("click already placed".into()));
                }
                next.clicks.push((*polarity, *at));
            }
            Event::Boxes { boxes } => {
                if let Some(b) = boxes.iter().find(|b| !b.fits(dims)) {
                    return Err(ApiError::BadRequest(format!("box {b:?} is outside the volume")));
                }
                next.boxes = boxes.clone();
            }
            Event::Sigma { sigma } => {
                let exp = ExpParams { sigma: *sigma, ..self.exp };
                exp.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
                next.exp = exp;
            }
            Event::Undo => {
                if next.clicks.pop().is_none() {
                    return Err(ApiError::BadRequest("no click to undo".into()));
                }
            }
            Event::Reset => next = Inputs { exp: self.exp, ..Inputs::default() },
            Event::GroundTruth => {}
        }
        Ok(next)
    }
}

/// An immutable committed revision of a session.
#[derive(Clone)]
pub struct Snapshot {
    pub revision: u64,
    pub volume: Arc<Volume>,
    pub inputs: Inputs,
    pub prediction: Arc<Mask>,
    pub truth: Option<Arc<Mask>>,
    pub events: Vec<Event>,
}

impl Snapshot {
    pub fn initial(volume: Arc<Volume>, exp: ExpParams, segmenter: &Segmenter) -> Result<Self, ApiError> {
        let inputs = Inputs { exp, ..Inputs::default() };
        let prediction = Arc::new(segmenter.segment(&volume, &inputs.click_set(), &inputs.boxes, &inputs.exp)?);
        Ok(Self { revision: 0, volume, inputs, prediction, truth: None, events: Vec::new() })
    }

    /// The next revision, with the prediction recomputed when its inputs changed.
    pub fn apply(&self, event: Event, truth: Option<Arc<Mask>>, segmenter: &Segmenter) -> Result<Snapshot, ApiError> {
        let inputs = self.inputs.apply(&event, &self.volume)?;
        let prediction = if inputs == self.inputs {
            self.prediction.clone()
        } else {
            Arc::new(segmenter.segment(&self.volume, &inputs.click_set(), &inputs.boxes, &inputs.exp)?)
        };
        let mut events = self.events.clone();
        events.push(event);
        Ok(Snapshot { revision: self.revision + 1, volume: self.volume.clone(), inputs, prediction, truth: truth.or_else(|| self.truth.clone()), events })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dins_core::volume::{Dims, Spacing};

    fn setup() -> (Snapshot, Segmenter) {
        let dims = Dims::new(2, 10, 10);
        let vol = Volume::from_vec(dims, Spacing::UNIT, dims.iter().map(|v| if v.y < 5 { 1.0 } else { 0.0 }).collect()).unwrap();
        let seg = Segmenter::new(BackendKind::GraphCut, BackendParams::default(), None).unwrap();
        (Snapshot::initial(Arc::new(vol), ExpParams::default(), &seg).unwrap(), seg)
    }

    #[test]
    fn click_then_undo_restores_clicks_and_advances_twice() {
        let (s0, seg) = setup();
        let s1 = s0.apply(Event::Click { polarity: Polarity::Positive, at: VoxelIndex::new(0, 2, 2) }, None, &seg).unwrap();
        assert!(!s1.prediction.is_all_false());
        let s2 = s1.apply(Event::Undo, None, &seg).unwrap();
        assert_eq!(s2.revision, 2);
        assert_eq!(s2.inputs, s0.inputs);
        assert_eq!(s2.prediction, s0.prediction);
    }

    #[test]
    fn invalid_events_are_rejected() {
        let (s0, seg) = setup();
        assert!(s0.apply(Event::Click { polarity: Polarity::Positive, at: VoxelIndex::new(2, 0, 0) }, None, &seg).is_err());
        assert!(s0.apply(Event::Undo, None, &seg).is_err());
        assert!(s0.apply(Event::Sigma { sigma: [0.0, 1.0, 1.0] }, None, &seg).is_err());
        let s1 = s0.apply(Event::Click { polarity: Polarity::Positive, at: VoxelIndex::new(0, 2, 2) }, None, &seg).unwrap();
        assert!(s1.apply(Event::Click { polarity: Polarity::Negative, at: VoxelIndex::new(0, 2, 2) }, None, &seg).is_err());
    }

    #[test]
    fn replay_is_a_pure_fold() {
        let (s0, seg) = setup();
        let events = vec![
            Event::Click { polarity: Polarity::Positive, at: VoxelIndex::new(0, 1, 1) },
            Event::Sigma { sigma: [1.5, 6.0, 6.0] },
            Event::Click { polarity: Polarity::Negative, at: VoxelIndex::new(1, 8, 8) },
            Event::Undo,
            Event::Click { polarity: Polarity::Negative, at: VoxelIndex::new(1, 7, 8) },
        ];
        let a = events.iter().fold(s0.clone(), |s, e| s.apply(e.clone(), None, &seg).unwrap());
        let b = events.iter().fold(s0, |s, e| s.apply(e.clone(), None, &seg).unwrap());
        assert_eq!((a.revision, &a.inputs, &a.prediction), (5, &b.inputs, &b.prediction));
        assert_eq!(a.inputs.exp.sigma, [1.5, 6.0, 6.0]);
    }
}
