use serde::{Deserialize, Serialize};

use super::VolumeError;

/// Voxel counts along (depth, height, width). Data is stored z-major with x fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Dims {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(depth: usize, height: usize, width: usize) -> Self {
        Self { depth, height, width }
    }

    pub fn len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    #[inline]
    pub fn offset(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.height + y) * self.width + x
    }

    #[inline]
    pub fn index_of(&self, offset: usize) -> VoxelIndex {
        let plane = self.height * self.width;
        let z = offset / plane;
        let rem = offset % plane;
        VoxelIndex::new(z, rem / self.width, rem % self.width)
    }

    #[inline]
    pub fn contains(&self, v: VoxelIndex) -> bool {
        v.z < self.depth && v.y < self.height && v.x < self.width
    }

    /// Neighbor offset by a signed step, or `None` when it leaves the grid.
    #[inline]
    pub fn step(&self, v: VoxelIndex, dz: isize, dy: isize, dx: isize) -> Option<VoxelIndex> {
        let z = v.z as isize + dz;
        let y = v.y as isize + dy;
        let x = v.x as isize + dx;
        if z < 0 || y < 0 || x < 0 {
            return None;
        }
        let n = VoxelIndex::new(z as usize, y as usize, x as usize);
        self.contains(n).then_some(n)
    }

    pub fn iter(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        let d = *self;
        (0..d.len()).map(move |o| d.index_of(o))
    }
}

impl From<[usize; 3]> for Dims {
    fn from(a: [usize; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Dims> for [usize; 3] {
    fn from(d: Dims) -> Self {
        d.as_array()
    }
}

/// Millimeters per voxel along (z, y, x).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Spacing {
    pub z: f64,
    pub y: f64,
    pub x: f64,
}

impl Spacing {
    pub const UNIT: Spacing = Spacing { z: 1.0, y: 1.0, x: 1.0 };

    pub const fn new(z: f64, y: f64, x: f64) -> Self {
        Self { z, y, x }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.z, self.y, self.x]
    }

    pub fn is_valid(&self) -> bool {
        self.as_array().iter().all(|s| s.is_finite() && *s > 0.0)
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self::UNIT
    }
}

impl From<[f64; 3]> for Spacing {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Spacing> for [f64; 3] {
    fn from(s: Spacing) -> Self {
        s.as_array()
    }
}

/// A voxel coordinate, serialized as `[z, y, x]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct VoxelIndex {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl VoxelIndex {
    pub const fn new(z: usize, y: usize, x: usize) -> Self {
        Self { z, y, x }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.z, self.y, self.x]
    }

    pub fn as_f64(&self) -> [f64; 3] {
        [self.z as f64, self.y as f64, self.x as f64]
    }
}

impl From<[usize; 3]> for VoxelIndex {
    fn from(a: [usize; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<VoxelIndex> for [usize; 3] {
    fn from(v: VoxelIndex) -> Self {
        v.as_array()
    }
}

/// Inclusive voxel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: VoxelIndex,
    pub max: VoxelIndex,
}

impl BoundingBox {
    pub fn new(min: VoxelIndex, max: VoxelIndex) -> Result<Self, VolumeError> {
        if min.z > max.z || min.y > max.y || min.x > max.x {
            return Err(VolumeError::InvalidBox(format!("min {min:?} exceeds max {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            min: VoxelIndex::new(0, 0, 0),
            max: VoxelIndex::new(dims.depth - 1, dims.height - 1, dims.width - 1),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(
            self.max.z - self.min.z + 1,
            self.max.y - self.min.y + 1,
            self.max.x - self.min.x + 1,
        )
    }

    pub fn contains(&self, v: VoxelIndex) -> bool {
        (self.min.z..=self.max.z).contains(&v.z)
            && (self.min.y..=self.max.y).contains(&v.y)
            && (self.min.x..=self.max.x).contains(&v.x)
    }

    pub fn fits(&self, dims: Dims) -> bool {
        self.min.z <= self.max.z
            && self.min.y <= self.max.y
            && self.min.x <= self.max.x
            && dims.contains(self.max)
    }

    /// Maps a global index into box-local coordinates.
    pub fn to_local(&self, v: VoxelIndex) -> Option<VoxelIndex> {
        self.contains(v)
            .then(|| VoxelIndex::new(v.z - self.min.z, v.y - self.min.y, v.x - self.min.x))
    }

    pub fn to_global(&self, v: VoxelIndex) -> VoxelIndex {
        VoxelIndex::new(v.z + self.min.z, v.y + self.min.y, v.x + self.min.x)
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            min: VoxelIndex::new(
                self.min.z.min(other.min.z),
                self.min.y.min(other.min.y),
                self.min.x.min(other.min.x),
            ),
            max: VoxelIndex::new(
                self.max.z.max(other.max.z),
                self.max.y.max(other.max.y),
                self.max.x.max(other.max.x),
            ),
        }
    }
}

/// Dense 3D grid with anisotropic spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dims: Dims,
    spacing: Spacing,
    data: Vec<T>,
}

/// Scalar image, distance map or probability map.
pub type Volume = Grid<f32>;
/// Binary voxel set aligned with a [`Volume`].
pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(dims: Dims, spacing: Spacing, value: T) -> Self {
        Self { dims, spacing, data: vec![value; dims.len()] }
    }

    pub fn from_vec(dims: Dims, spacing: Spacing, data: Vec<T>) -> Result<Self, VolumeError> {
        if dims.depth == 0 || dims.height == 0 || dims.width == 0 {
            return Err(VolumeError::InvalidDims(dims.as_array()));
        }
        if !spacing.is_valid() {
            return Err(VolumeError::InvalidSpacing(spacing.as_array()));
        }
        if data.len() != dims.len() {
            return Err(VolumeError::DataLengthMismatch { expected: dims.len(), actual: data.len() });
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn set_spacing(&mut self, spacing: Spacing) {
        self.spacing = spacing;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, v: VoxelIndex) -> &T {
        &self.data[self.dims.offset(v.z, v.y, v.x)]
    }

    #[inline]
    pub fn set(&mut self, v: VoxelIndex, value: T) {
        let o = self.dims.offset(v.z, v.y, v.x);
        self.data[o] = value;
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> &T {
        &self.data[self.dims.offset(z, y, x)]
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> Grid<U> {
        Grid { dims: self.dims, spacing: self.spacing, data: self.data.iter().map(f).collect() }
    }

    /// Same dims and spacing, new payload.
    pub fn with_data<U>(&self, data: Vec<U>) -> Grid<U> {
        assert_eq!(data.len(), self.dims.len(), "payload length must match dims");
        Grid { dims: self.dims, spacing: self.spacing, data }
    }

    pub fn crop(&self, b: &BoundingBox) -> Result<Grid<T>, VolumeError> {
        if !b.fits(self.dims) {
            return Err(VolumeError::BoxOutOfRange { bbox: *b, dims: self.dims.as_array() });
        }
        let bd = b.dims();
        let mut data = Vec::with_capacity(bd.len());
        for z in b.min.z..=b.max.z {
            for y in b.min.y..=b.max.y {
                let start = self.dims.offset(z, y, b.min.x);
                data.extend_from_slice(&self.data[start..start + bd.width]);
            }
        }
        Ok(Grid { dims: bd, spacing: self.spacing, data })
    }

    /// Writes `src` into a copy of `self` at `b`.
    pub fn paste(&self, src: &Grid<T>, b: &BoundingBox) -> Result<Grid<T>, VolumeError> {
        let mut out = self.clone();
        out.paste_in_place(src, b)?;
        Ok(out)
    }

    pub fn paste_in_place(&mut self, src: &Grid<T>, b: &BoundingBox) -> Result<(), VolumeError> {
        if !b.fits(self.dims) {
            return Err(VolumeError::BoxOutOfRange { bbox: *b, dims: self.dims.as_array() });
        }
        let bd = b.dims();
        if src.dims != bd {
            return Err(VolumeError::DimsMismatch { expected: bd.as_array(), actual: src.dims.as_array() });
        }
        for z in 0..bd.depth {
            for y in 0..bd.height {
                let dst = self.dims.offset(z + b.min.z, y + b.min.y, b.min.x);
                let s = bd.offset(z, y, 0);
                self.data[dst..dst + bd.width].clone_from_slice(&src.data[s..s + bd.width]);
            }
        }
        Ok(())
    }

    pub fn check_same_dims<U>(&self, other: &Grid<U>) -> Result<(), VolumeError> {
        if self.dims != other.dims {
            return Err(VolumeError::DimsMismatch {
                expected: self.dims.as_array(),
                actual: other.dims.as_array(),
            });
        }
        Ok(())
    }
}

impl Grid<bool> {
    pub fn empty(dims: Dims, spacing: Spacing) -> Self {
        Self::filled(dims, spacing, false)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_all_false(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn voxels(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(o, _)| self.dims.index_of(o))
    }

    pub fn to_volume(&self) -> Volume {
        self.map(|&b| if b { 1.0 } else { 0.0 })
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn xor(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a != b)
    }

    pub fn not(&self) -> Mask {
        self.map(|&b| !b)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.dims, other.dims, "mask dims must match");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Grid { dims: self.dims, spacing: self.spacing, data }
    }

    /// Tight bounding box of the set voxels.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut it = self.voxels();
        let first = it.next()?;
        let mut b = BoundingBox { min: first, max: first };
        for v in it {
            b = b.union(&BoundingBox { min: v, max: v });
        }
        Some(b)
    }
}

impl Grid<f32> {
    pub fn zeros(dims: Dims, spacing: Spacing) -> Self {
        Self::filled(dims, spacing, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Voxels with value ≥ `t`.
    pub fn threshold(&self, t: f32) -> Mask {
        self.map(|&v| v >= t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: Dims) -> Volume {
        Volume::from_vec(dims, Spacing::UNIT, (0..dims.len()).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn offsets_are_x_fastest() {
        let d = Dims::new(2, 3, 4);
        assert_eq!(d.offset(0, 0, 1), 1);
        assert_eq!(d.offset(0, 1, 0), 4);
        assert_eq!(d.offset(1, 0, 0), 12);
        for o in 0..d.len() {
            let v = d.index_of(o);
            assert_eq!(d.offset(v.z, v.y, v.x), o);
        }
    }

    #[test]
    fn crop_full_extent_is_identity() {
        let v = ramp(Dims::new(3, 4, 5));
        assert_eq!(v.crop(&BoundingBox::full(v.dims())).unwrap(), v);
    }

    #[test]
    fn crop_paste_round_trip() {
        let v = ramp(Dims::new(4, 5, 6));
        let b = BoundingBox::new(VoxelIndex::new(1, 1, 2), VoxelIndex::new(2, 3, 4)).unwrap();
        let sub = v.crop(&b).unwrap();
        assert_eq!(sub.dims(), Dims::new(2, 3, 3));
        assert_eq!(*sub.at(0, 0, 0), *v.at(1, 1, 2));
        let pasted = Volume::zeros(v.dims(), v.spacing()).paste(&sub, &b).unwrap();
        assert_eq!(pasted.crop(&b).unwrap(), sub);
        assert_eq!(*pasted.at(0, 0, 0), 0.0);
    }

    #[test]
    fn crop_out_of_range_fails() {
        let v = ramp(Dims::new(2, 2, 2));
        let b = BoundingBox::new(VoxelIndex::new(0, 0, 0), VoxelIndex::new(1, 1, 2)).unwrap();
        assert!(matches!(v.crop(&b), Err(VolumeError::BoxOutOfRange { .. })));
    }

    #[test]
    fn paste_rejects_mismatched_source() {
        let v = ramp(Dims::new(2, 2, 2));
        let b = BoundingBox::new(VoxelIndex::new(0, 0, 0), VoxelIndex::new(0, 1, 1)).unwrap();
        let src = ramp(Dims::new(1, 1, 2));
        assert!(matches!(v.paste(&src, &b), Err(VolumeError::DimsMismatch { .. })));
    }

    #[test]
    fn from_vec_validates() {
        let d = Dims::new(2, 2, 2);
        assert!(matches!(
            Volume::from_vec(d, Spacing::UNIT, vec![0.0; 7]),
            Err(VolumeError::DataLengthMismatch { expected: 8, actual: 7 })
        ));
        assert!(Volume::from_vec(d, Spacing::new(0.0, 1.0, 1.0), vec![0.0; 8]).is_err());
        assert!(Volume::from_vec(Dims::new(0, 2, 2), Spacing::UNIT, vec![]).is_err());
    }

    #[test]
    fn inverted_box_is_rejected() {
        assert!(BoundingBox::new(VoxelIndex::new(1, 0, 0), VoxelIndex::new(0, 0, 0)).is_err());
    }
}
