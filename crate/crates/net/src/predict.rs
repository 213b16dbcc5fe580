//! Whole-volume and box-restricted inference.

use dins_core::transforms::{expdt, ClickSet, ExpParams};
use dins_core::volume::{BoundingBox, Dims, Mask, Volume, VoxelIndex};

use crate::{Model, NetError, Tensor};

/// Per-volume z-score; a constant volume maps to zeros.
pub fn zscore(image: &Volume) -> Volume {
    let n = image.data().len().max(1) as f64;
    let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return image.map(|_| 0.0);
    }
    image.map(|&v| ((v as f64 - mean) / std) as f32)
}

/// Smallest legal network extent covering `n` voxels: even depth, in-plane multiples of 16.
pub fn padded_extent(dims: [usize; 3]) -> [usize; 3] {
    let up = |v: usize, m: usize| v.max(1).div_ceil(m) * m;
    [up(dims[0], 2), up(dims[1], 16), up(dims[2], 16)]
}

/// Grows `b` towards a legal extent while staying inside `grid`. Axes that
/// cannot grow enough inside the grid take the whole axis; the returned
/// extent says how large the zero-padded input must be.
pub fn expand_box(b: &BoundingBox, grid: Dims) -> Result<(BoundingBox, [usize; 3]), NetError> {
    if !b.fits(grid) {
        return Err(NetError::Shape(format!("box {b:?} lies outside grid {:?}", grid.as_array())));
    }
    let target = padded_extent(b.dims().as_array());
    let g = grid.as_array();
    let (lo, hi) = (b.min.as_array(), b.max.as_array());
    let mut min = [0; 3];
    let mut max = [0; 3];
    for a in 0..3 {
        if target[a] >= g[a] {
            (min[a], max[a]) = (0, g[a] - 1);
            continue;
        }
        let extra = target[a] - (hi[a] - lo[a] + 1);
        let start = lo[a].saturating_sub(extra / 2).min(g[a] - target[a]);
        (min[a], max[a]) = (start, start + target[a] - 1);
    }
    let grown = BoundingBox::new(VoxelIndex::new(min[0], min[1], min[2]), VoxelIndex::new(max[0], max[1], max[2])).expect("ordered");
    Ok((grown, target))
}

/// Copies `v` into the leading corner of a zero volume of `extent`.
fn zero_pad(v: &Volume, extent: [usize; 3]) -> Vec<f32> {
    let [d, h, w] = v.dims().as_array();
    let [pd, ph, pw] = extent;
    let mut out = vec![0.0f32; pd * ph * pw];
    for z in 0..d {
        for y in 0..h {
            let src = &v.data()[(z * h + y) * w..(z * h + y + 1) * w];
            out[(z * ph + y) * pw..(z * ph + y) * pw + w].copy_from_slice(src);
        }
    }
    out
}

/// Network input pair for one region: image `[1,1,..]` and guides `[1,2,..]`.
pub fn region_inputs(image: &Volume, fg: &Volume, bg: &Volume, extent: [usize; 3]) -> (Tensor, Tensor) {
    let shape = [1, 1, extent[0], extent[1], extent[2]];
    let img = Tensor::from_vec(&shape, zero_pad(image, extent)).expect("sized");
    let mut guides = zero_pad(fg, extent);
    guides.extend(zero_pad(bg, extent));
    let guides = Tensor::from_vec(&[1, 2, extent[0], extent[1], extent[2]], guides).expect("sized");
    (img, guides)
}

/// Foreground wins only with a strictly larger logit, so ties go to background.
fn argmax_fg(logits: &Tensor, region: Dims, extent: [usize; 3]) -> Vec<bool> {
    let [d, h, w] = region.as_array();
    let [_, ph, pw] = extent;
    let s = extent.iter().product::<usize>();
    let (bg, fg) = logits.data().split_at(s);
    let mut out = Vec::with_capacity(region.len());
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * ph + y) * pw + x;
                out.push(fg[i] > bg[i]);
            }
        }
    }
    out
}

/// Segments `image` given clicks. With `boxes`, each box is predicted on its
/// own padded neighborhood and only voxels inside some box can be foreground.
pub fn predict(model: &Model, image: &Volume, clicks: &ClickSet, exp: &ExpParams, boxes: Option<&[BoundingBox]>) -> Result<Mask, NetError> {
    let dims = image.dims();
    clicks.validate(dims).map_err(|e| NetError::Shape(e.to_string()))?;
    let normalized = zscore(image);
    let guide = |seeds| expdt(dims, image.spacing(), seeds, exp).map_err(|e| NetError::Config(e.to_string()));
    let (fg, bg) = (guide(&clicks.positives)?, guide(&clicks.negatives)?);
    let full = [BoundingBox::full(dims)];
    let boxes = boxes.unwrap_or(&full);
    let mut out = Mask::empty(dims, image.spacing());
    for b in boxes {
        let (grown, extent) = expand_box(b, dims)?;
        let crop = |v: &Volume| v.crop(&grown).expect("box fits");
        let (x, g) = region_inputs(&crop(&normalized), &crop(&fg), &crop(&bg), extent);
        let logits = model.forward(&x, &g)?;
        let region = Mask::from_vec(grown.dims(), image.spacing(), argmax_fg(&logits, grown.dims(), extent)).expect("sized");
        for v in region.voxels() {
            let global = grown.to_global(v);
            if b.contains(global) {
                out.set(global, true);
            }
        }
    }
    Ok(out)
}
