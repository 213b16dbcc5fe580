use serde::{Deserialize, Serialize};

use super::TransformError;
use crate::volume::{Dims, VoxelIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered foreground/background clicks. JSON:
/// `{"positives":[[z,y,x],...],"negatives":[[z,y,x],...]}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickSet {
    #[serde(default)]
    pub positives: Vec<VoxelIndex>,
    #[serde(default)]
    pub negatives: Vec<VoxelIndex>,
}

impl ClickSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn list(&self, polarity: Polarity) -> &[VoxelIndex] {
        match polarity {
            Polarity::Positive => &self.positives,
            Polarity::Negative => &self.negatives,
        }
    }

    /// Appends a click. Returns `Ok(false)` when the same click is already
    /// present, and an error when the voxel carries the opposite polarity.
    pub fn push(&mut self, polarity: Polarity, v: VoxelIndex) -> Result<bool, TransformError> {
        let (same, other) = match polarity {
            Polarity::Positive => (&mut self.positives, &self.negatives),
            Polarity::Negative => (&mut self.negatives, &self.positives),
        };
        if other.contains(&v) {
            return Err(TransformError::InvalidClicks(format!("{v:?} already clicked with opposite polarity")));
        }
        if same.contains(&v) {
            return Ok(false);
        }
        same.push(v);
        Ok(true)
    }

    /// Checks the set invariants against a grid.
    pub fn validate(&self, dims: Dims) -> Result<(), TransformError> {
        for (name, list) in [("positive", &self.positives), ("negative", &self.negatives)] {
            for (i, v) in list.iter().enumerate() {
                if !dims.contains(*v) {
                    return Err(TransformError::InvalidClicks(format!(
                        "{name} click {v:?} outside grid {:?}",
                        dims.as_array()
                    )));
                }
                if list[..i].contains(v) {
                    return Err(TransformError::InvalidClicks(format!("duplicate {name} click {v:?}")));
                }
            }
        }
        if let Some(v) = self.positives.iter().find(|v| self.negatives.contains(v)) {
            return Err(TransformError::InvalidClicks(format!("{v:?} is both positive and negative")));
        }
        Ok(())
    }
}
