//! Slice extraction, windowed PNG encoding and marching-squares contours.

use std::collections::BTreeMap;

use dins_core::volume::{Grid, VoxelIndex};
use serde::{Deserialize, Serialize};

use crate::ApiError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Z,
    Y,
    X,
}

impl Axis {
    fn pos(self) -> usize {
        match self {
            Axis::Z => 0,
            Axis::Y => 1,
            Axis::X => 2,
        }
    }

    /// The two in-slice axes as (row, col).
    fn plane(self) -> (usize, usize) {
        match self {
            Axis::Z => (1, 2),
            Axis::Y => (0, 2),
            Axis::X => (0, 1),
        }
    }

    /// Slice (rows, cols) for a grid of the given dims.
    pub fn slice_shape(self, dims: [usize; 3]) -> (usize, usize) {
        let (r, c) = self.plane();
        (dims[r], dims[c])
    }

    pub fn len(self, dims: [usize; 3]) -> usize {
        dims[self.pos()]
    }

    /// Voxel at (row, col) of slice `index`.
    pub fn voxel(self, index: usize, row: usize, col: usize) -> VoxelIndex {
        let mut a = [0; 3];
        a[self.pos()] = index;
        let (r, c) = self.plane();
        a[r] = row;
        a[c] = col;
        VoxelIndex::new(a[0], a[1], a[2])
    }

    /// (row, col) of `v` when it lies on slice `index`.
    pub fn project(self, index: usize, v: VoxelIndex) -> Option<(usize, usize)> {
        let a = v.as_array();
        let (r, c) = self.plane();
        (a[self.pos()] == index).then_some((a[r], a[c]))
    }
}

/// Row-major copy of one slice.
pub fn extract<T: Clone>(grid: &Grid<T>, axis: Axis, index: usize) -> Result<(usize, usize, Vec<T>), ApiError> {
    let dims = grid.dims().as_array();
    if index >= axis.len(dims) {
        return Err(ApiError::BadRequest(format!("slice {index} out of range for axis {axis:?} of length {}", axis.len(dims))));
    }
    let (rows, cols) = axis.slice_shape(dims);
    let data = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| grid.get(axis.voxel(index, r, c)).clone()).collect();
    Ok((rows, cols, data))
}

/// 8-bit grayscale PNG with linear windowing; values map to
/// round(255·(v−lo)/(hi−lo)) clamped to [0, 255].
pub fn encode_png(rows: usize, cols: usize, values: &[f32], window: (f32, f32)) -> Result<Vec<u8>, ApiError> {
    let (lo, hi) = window;
    let span = hi - lo;
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| if span > 0.0 { (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect();
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, cols as u32, rows as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let internal = |e: png::EncodingError| ApiError::Internal(format!("png encoding failed: {e}"));
    let mut writer = enc.write_header().map_err(internal)?;
    writer.write_image_data(&pixels).map_err(internal)?;
    writer.finish().map_err(internal)?;
    Ok(out)
}

/// Closed polylines, in (row, col) slice coordinates, of the 0.5 iso-line of a
/// binary image sampled at pixel centers. Each loop repeats its first point at
/// the end. Diagonal-only contacts are kept apart, so one isolated pixel gives
/// a four-segment diamond through its edge midpoints.
pub fn contours(rows: usize, cols: usize, mask: &[bool]) -> Vec<Vec<[f64; 2]>> {
    let at = |r: i64, c: i64| r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols && mask[r as usize * cols + c as usize];
    // Points are stored doubled so edge midpoints stay integral.
    let mut segments: Vec<[(i64, i64); 2]> = Vec::new();
    for i in -1..rows as i64 {
        for j in -1..cols as i64 {
            let corners = [at(i, j), at(i, j + 1), at(i + 1, j + 1), at(i + 1, j)];
            let edges = [(2 * i, 2 * j + 1), (2 * i + 1, 2 * j + 2), (2 * i + 2, 2 * j + 1), (2 * i + 1, 2 * j)];
            // Edge k joins corner k and corner k+1.
            let crossing: Vec<usize> = (0..4).filter(|&k| corners[k] != corners[(k + 1) % 4]).collect();
            match crossing.len() {
                2 => segments.push([edges[crossing[0]], edges[crossing[1]]]),
                4 => {
                    // Saddle: cut off each foreground corner on its own.
                    for k in (0..4).filter(|&k| corners[k]) {
                        segments.push([edges[(k + 3) % 4], edges[k]]);
                    }
                }
                _ => {}
            }
        }
    }
    let mut by_point: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (s, seg) in segments.iter().enumerate() {
        for p in seg {
            by_point.entry(*p).or_default().push(s);
        }
    }
    let mut used = vec![false; segments.len()];
    let mut loops = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let first = segments[start][0];
        let mut path = vec![first, segments[start][1]];
        let mut current = segments[start][1];
        while current != first {
            let Some(&next) = by_point[&current].iter().find(|&&s| !used[s]) else { break };
            used[next] = true;
            current = if segments[next][0] == current { segments[next][1] } else { segments[next][0] };
            path.push(current);
        }
        loops.push(path.into_iter().map(|(r, c)| [r as f64 / 2.0, c as f64 / 2.0]).collect());
    }
    loops
}

#[cfg(test)]
mod tests {
    use super::*;
    use dins_core::volume::{Dims, Spacing};

    #[test]
    fn single_pixel_gives_one_diamond() {
        let mut m = vec![false; 25];
        m[2 * 5 + 3] = true;
        let c = contours(5, 5, &m);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len(), 5);
        assert_eq!(c[0].first(), c[0].last());
        let mut pts: Vec<[f64; 2]> = c[0][..4].to_vec();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pts, vec![[1.5, 3.0], [2.0, 2.5], [2.0, 3.5], [2.5, 3.0]]);
    }

    #[test]
    fn empty_and_full_masks() {
        assert!(contours(4, 4, &[false; 16]).is_empty());
        let full = contours(2, 3, &[true; 6]);
        assert_eq!(full.len(), 1);
        assert!(full[0].iter().all(|p| (-0.5..=2.5).contains(&p[0]) && (-0.5..=3.0).contains(&p[1])));
    }

    #[test]
    fn diagonal_pixels_and_holes_give_separate_loops() {
        let diag = [true, false, false, true];
        assert_eq!(contours(2, 2, &diag).len(), 2);
        let mut ring = vec![true; 9];
        ring[4] = false;
        assert_eq!(contours(3, 3, &ring).len(), 2);
    }

    #[test]
    fn axes_map_voxels_both_ways() {
        let dims = Dims::new(3, 4, 5);
        let g = Grid::from_vec(dims, Spacing::UNIT, (0..60).collect::<Vec<i32>>()).unwrap();
        for axis in [Axis::Z, Axis::Y, Axis::X] {
            let index = axis.len(dims.as_array()) - 1;
            let (rows, cols, data) = extract(&g, axis, index).unwrap();
            for r in 0..rows {
                for c in 0..cols {
                    let v = axis.voxel(index, r, c);
                    assert_eq!(data[r * cols + c], *g.get(v));
                    assert_eq!(axis.project(index, v), Some((r, c)));
                }
            }
            assert!(extract(&g, axis, index + 1).is_err());
        }
    }

    #[test]
    fn png_window_is_linear_and_deterministic() {
        let a = encode_png(1, 3, &[0.0, 0.5, 2.0], (0.0, 1.0)).unwrap();
        assert_eq!(a, encode_png(1, 3, &[0.0, 0.5, 2.0], (0.0, 1.0)).unwrap());
        let dec = png::Decoder::new(std::io::Cursor::new(a));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        reader.next_frame(&mut buf).unwrap();
        assert_eq!(&buf[..3], &[0, 128, 255]);
    }
}
