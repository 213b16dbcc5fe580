use std::collections::VecDeque;

use super::{Dims, Grid, Mask, VolumeError, VoxelIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge and corner neighbors.
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<(isize, isize, isize)> {
        let mut out = Vec::with_capacity(26);
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let manhattan = dz.abs() + dy.abs() + dx.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push((dz, dy, dx));
                    }
                }
            }
        }
        out
    }
}

/// Component labeling result: 0 is background, components are `1..=count`
/// numbered in raster order of their first voxel.
#[derive(Clone, Debug)]
pub struct Labels {
    pub grid: Grid<u32>,
    pub count: usize,
}

impl Labels {
    pub fn mask(&self, label: u32) -> Mask {
        self.grid.map(|&l| l == label)
    }

    /// Voxel count per label; index 0 holds the background count.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count + 1];
        for &l in self.grid.data() {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

pub fn connected_components(m: &Mask, connectivity: Connectivity) -> Labels {
    let dims = m.dims();
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; dims.len()];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..dims.len() {
        if !m.data()[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(o) = queue.pop_front() {
            let v = dims.index_of(o);
            for &(dz, dy, dx) in &offsets {
                if let Some(n) = dims.step(v, dz, dy, dx) {
                    let no = dims.offset(n.z, n.y, n.x);
                    if m.data()[no] && labels[no] == 0 {
                        labels[no] = count;
                        queue.push_back(no);
                    }
                }
            }
        }
    }
    Labels { grid: m.with_data(labels), count: count as usize }
}

/// Mean voxel position of a mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Centroid {
    pub continuous: [f64; 3],
    /// Nearest voxel, ties rounded away from zero.
    pub rounded: VoxelIndex,
}

pub fn centroid(m: &Mask) -> Result<Centroid, VolumeError> {
    let mut sum = [0f64; 3];
    let mut n = 0usize;
    for v in m.voxels() {
        sum[0] += v.z as f64;
        sum[1] += v.y as f64;
        sum[2] += v.x as f64;
        n += 1;
    }
    if n == 0 {
        return Err(VolumeError::EmptyMask);
    }
    let c = sum.map(|s| s / n as f64);
    Ok(Centroid {
        continuous: c,
        rounded: VoxelIndex::new(c[0].round() as usize, c[1].round() as usize, c[2].round() as usize),
    })
}

/// In-plane (y, x) erosion by a square of half-width `radius`, applied to each
/// z slice independently. Voxels outside the grid count as unset.
pub fn erode_in_plane(m: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return m.clone();
    }
    let dims = m.dims();
    let mut out = m.clone();
    // Separable: a voxel survives iff every voxel of its (2r+1)-run survives on each axis.
    let along_x = run_filter(m.data(), dims, radius, Axis::X);
    let along_y = run_filter(&along_x, dims, radius, Axis::Y);
    out.data_mut().copy_from_slice(&along_y);
    out
}

/// In-plane (y, x) dilation by a square of half-width `radius`, per z slice.
pub fn dilate_in_plane(m: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return m.clone();
    }
    // Dilation of a set is the complement of eroding its complement, with the
    // outside of the grid on the complement side.
    let inverted: Vec<bool> = m.data().iter().map(|&b| !b).collect();
    let dims = m.dims();
    let along_x = run_filter_padded(&inverted, dims, radius, Axis::X, true);
    let along_y = run_filter_padded(&along_x, dims, radius, Axis::Y, true);
    m.with_data(along_y.into_iter().map(|b| !b).collect())
}

enum Axis {
    X,
    Y,
}

fn run_filter(data: &[bool], dims: Dims, r: usize, axis: Axis) -> Vec<bool> {
    run_filter_padded(data, dims, r, axis, false)
}

/// True where all `2r+1` voxels of the run centered on it are set; voxels
/// beyond the grid edge count as `outside`.
fn run_filter_padded(data: &[bool], dims: Dims, r: usize, axis: Axis, outside: bool) -> Vec<bool> {
    let mut out = vec![false; data.len()];
    let (n, stride) = match axis {
        Axis::X => (dims.width, 1),
        Axis::Y => (dims.height, dims.width),
    };
    let mut prefix = vec![0usize; n + 1];
    for z in 0..dims.depth {
        let lines: Vec<usize> = match axis {
            Axis::X => (0..dims.height).map(|y| dims.offset(z, y, 0)).collect(),
            Axis::Y => (0..dims.width).map(|x| dims.offset(z, 0, x)).collect(),
        };
        for base in lines {
            for i in 0..n {
                prefix[i + 1] = prefix[i] + data[base + i * stride] as usize;
            }
            for i in 0..n {
                let lo = i.saturating_sub(r);
                let hi = (i + r).min(n - 1);
                let missing = 2 * r + 1 - (hi - lo + 1);
                if missing > 0 && !outside {
                    continue;
                }
                let set = prefix[hi + 1] - prefix[lo];
                out[base + i * stride] = set == hi - lo + 1;
            }
        }
    }
    out
}

/// Slice-wise thinning in the (y, x) plane.
///
/// Zhang–Suen sub-iterations select deletion candidates; candidates are then
/// removed one at a time and re-checked against the current slice, so a pixel
/// is only removed while its 8-neighborhood stays a single run with at least
/// two members. This keeps every 8-connected component of every slice alive
/// (the plain parallel rule erases 2×2 blocks entirely).
pub fn skeletonize(m: &Mask) -> Mask {
    let dims = m.dims();
    let mut out = m.clone();
    let plane = dims.height * dims.width;
    for z in 0..dims.depth {
        let start = z * plane;
        let mut slice = m.data()[start..start + plane].to_vec();
        thin_slice(&mut slice, dims.height, dims.width);
        out.data_mut()[start..start + plane].copy_from_slice(&slice);
    }
    out
}

/// Neighbors P2..P9 clockwise from north.
const RING: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

fn ring(img: &[bool], h: usize, w: usize, y: usize, x: usize) -> [bool; 8] {
    let mut p = [false; 8];
    for (k, (dy, dx)) in RING.iter().enumerate() {
        let ny = y as isize + dy;
        let nx = x as isize + dx;
        if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w {
            p[k] = img[ny as usize * w + nx as usize];
        }
    }
    p
}

fn transitions(p: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count()
}

fn removable(p: &[bool; 8]) -> bool {
    let b = p.iter().filter(|&&v| v).count();
    (2..=6).contains(&b) && transitions(p) == 1
}

fn thin_slice(img: &mut [bool], h: usize, w: usize) {
    loop {
        let mut changed = false;
        for step in 0..2 {
            let mut candidates = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !img[y * w + x] {
                        continue;
                    }
                    let p = ring(img, h, w, y, x);
                    let (n, e, s, wv) = (p[0], p[2], p[4], p[6]);
                    let directional = if step == 0 {
                        !(n && e && s) && !(e && s && wv)
                    } else {
                        !(n && e && wv) && !(n && s && wv)
                    };
                    if directional && removable(&p) {
                        candidates.push(y * w + x);
                    }
                }
            }
            for o in candidates {
                let p = ring(img, h, w, o / w, o % w);
                if removable(&p) {
                    img[o] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}
