//! Bounding boxes for box-restricted inference, derived from a label mask or
//! read from a JSON file.

use std::path::Path;

use dins_core::volume::{connected_components, BoundingBox, Connectivity, Dims, Mask, Spacing, VoxelIndex};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxPolicy {
    pub max_boxes: usize,
    /// Minimum in-plane extent in voxels, capped at the grid extent.
    pub min_in_plane: usize,
}

impl Default for BoxPolicy {
    fn default() -> Self {
        Self { max_boxes: 5, min_in_plane: 128 }
    }
}

/// Physical gap between two boxes; zero when they touch or overlap.
fn gap(a: &BoundingBox, b: &BoundingBox, spacing: Spacing) -> f64 {
    let (amin, amax, bmin, bmax) = (a.min.as_array(), a.max.as_array(), b.min.as_array(), b.max.as_array());
    let s = spacing.as_array();
    (0..3)
        .map(|k| {
            let g = if amax[k] < bmin[k] {
                bmin[k] - amax[k]
            } else if bmax[k] < amin[k] {
                amin[k] - bmax[k]
            } else {
                0
            };
            (g as f64 * s[k]).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Widens the in-plane extent of `b` to `min(target, grid)` around its
/// center, shifting inward at the borders. Depth is left tight.
fn widen(b: &BoundingBox, grid: Dims, target: usize) -> BoundingBox {
    let g = grid.as_array();
    let (mut min, mut max) = (b.min.as_array(), b.max.as_array());
    for a in 1..3 {
        let want = target.min(g[a]);
        let have = max[a] - min[a] + 1;
        if have >= want {
            continue;
        }
        let start = (min[a] as isize - ((want - have) / 2) as isize).clamp(0, (g[a] - want) as isize) as usize;
        (min[a], max[a]) = (start, start + want - 1);
    }
    BoundingBox::new(VoxelIndex::new(min[0], min[1], min[2]), VoxelIndex::new(max[0], max[1], max[2])).expect("ordered")
}

/// One box per 26-connected tumor; the two closest boxes are merged until at
/// most `policy.max_boxes` remain, then each is widened in-plane.
pub fn build_boxes(gt: &Mask, policy: &BoxPolicy) -> Vec<BoundingBox> {
    let labels = connected_components(gt, Connectivity::TwentySix);
    let mut boxes: Vec<BoundingBox> = (1..=labels.count as u32).filter_map(|l| labels.mask(l).bounding_box()).collect();
    while boxes.len() > policy.max_boxes.max(1) {
        let mut best = (f64::INFINITY, 0, 1);
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                let d = gap(&boxes[i], &boxes[j], gt.spacing());
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let merged = boxes[best.1].union(&boxes[best.2]);
        boxes.remove(best.2);
        boxes[best.1] = merged;
    }
    boxes.iter().map(|b| widen(b, gt.dims(), policy.min_in_plane)).collect()
}

pub fn read_boxes(path: &Path) -> Result<Vec<BoundingBox>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(dims: Dims, centers: &[[usize; 3]]) -> Mask {
        let mut m = Mask::empty(dims, Spacing::UNIT);
        for c in centers {
            for dy in 0..2 {
                for dx in 0..2 {
                    m.set(VoxelIndex::new(c[0], c[1] + dy, c[2] + dx), true);
                }
            }
        }
        m
    }

    #[test]
    fn seven_tumors_fit_in_five_covering_boxes() {
        let gt = blobs(Dims::new(6, 200, 200), &[[0, 2, 2], [1, 10, 5], [2, 100, 100], [3, 150, 20], [4, 30, 180], [5, 190, 190], [2, 60, 60]]);
        let boxes = build_boxes(&gt, &BoxPolicy::default());
        assert!(boxes.len() <= 5);
        assert!(gt.voxels().all(|v| boxes.iter().any(|b| b.contains(v))));
        for b in &boxes {
            let d = b.dims();
            assert!(d.height >= 128 && d.width >= 128 && b.fits(gt.dims()));
        }
    }

    #[test]
    fn single_tumor_box_is_clamped_to_grid() {
        let gt = blobs(Dims::new(64, 64, 64), &[[30, 62, 1]]);
        let boxes = build_boxes(&gt, &BoxPolicy::default());
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        assert_eq!((b.min.y, b.max.y, b.min.x, b.max.x), (0, 63, 0, 63));
        assert_eq!((b.min.z, b.max.z), (30, 30));
    }

    #[test]
    fn empty_mask_gives_no_boxes() {
        assert!(build_boxes(&Mask::empty(Dims::new(2, 8, 8), Spacing::UNIT), &BoxPolicy::default()).is_empty());
    }
}
