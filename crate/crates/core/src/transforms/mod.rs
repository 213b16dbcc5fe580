//! Click sets to guide maps: Euclidean, geodesic, blended and exponential transforms.

mod clicks;
mod edt;
mod expdt;
mod gdt;

pub use clicks::{ClickSet, Polarity};
pub use edt::{edt, edt_mask, squared_edt_mask};
pub use expdt::{expdt, ExpParams};
pub use gdt::{blend_dt, gdt, GdtParams, Neighborhood};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Dims, Spacing, Volume, VoxelIndex};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("seed set is empty")]
    EmptySeeds,
    #[error("invalid transform parameters: {0}")]
    InvalidParams(String),
    #[error("invalid clicks: {0}")]
    InvalidClicks(String),
}

/// Which transform turns a click list into a guide channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum GuideTransform {
    Edt {
        #[serde(default)]
        use_physical_spacing: bool,
    },
    Gdt(GdtParams),
    Blend(GdtParams),
    Exp(ExpParams),
}

impl Default for GuideTransform {
    fn default() -> Self {
        GuideTransform::Exp(ExpParams::default())
    }
}

/// Foreground (from positive clicks) and background (from negative clicks) channels.
#[derive(Clone, Debug, PartialEq)]
pub struct GuideMaps {
    pub foreground: Volume,
    pub background: Volume,
}

/// Fill value for a distance channel with no clicks: the length of the grid's
/// spatial diagonal, in the same units the transform measures in.
pub fn empty_channel_sentinel(dims: Dims, spacing: Spacing, use_physical_spacing: bool) -> f32 {
    let unit = if use_physical_spacing { spacing.as_array() } else { [1.0; 3] };
    let d = dims.as_array();
    (0..3).map(|a| (d[a] as f64 * unit[a]).powi(2)).sum::<f64>().sqrt() as f32
}

/// Applies `transform` to one click list.
pub fn guide_channel(
    image: &Volume,
    seeds: &[VoxelIndex],
    transform: &GuideTransform,
) -> Result<Volume, TransformError> {
    let dims = image.dims();
    let spacing = image.spacing();
    match transform {
        GuideTransform::Exp(p) => expdt(dims, spacing, seeds, p),
        GuideTransform::Edt { use_physical_spacing } => {
            if seeds.is_empty() {
                return Ok(Volume::filled(
                    dims,
                    spacing,
                    empty_channel_sentinel(dims, spacing, *use_physical_spacing),
                ));
            }
            edt(dims, spacing, seeds, *use_physical_spacing)
        }
        GuideTransform::Gdt(p) | GuideTransform::Blend(p) => {
            if seeds.is_empty() {
                p.validate()?;
                return Ok(Volume::filled(
                    dims,
                    spacing,
                    empty_channel_sentinel(dims, spacing, p.use_physical_spacing),
                ));
            }
            gdt(image, seeds, p)
        }
    }
}

pub fn make_guides(
    image: &Volume,
    clicks: &ClickSet,
    transform: &GuideTransform,
) -> Result<GuideMaps, TransformError> {
    clicks.validate(image.dims())?;
    Ok(GuideMaps {
        foreground: guide_channel(image, &clicks.positives, transform)?,
        background: guide_channel(image, &clicks.negatives, transform)?,
    })
}
