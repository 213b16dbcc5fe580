//! Voxel grids, file I/O and binary-mask morphology.

mod grid;
mod io;
mod morphology;
mod nifti;

pub use grid::{BoundingBox, Dims, Grid, Mask, Spacing, Volume, VoxelIndex};
pub use io::{
    decode_raw, encode_raw, header_path, read_volume, write_mask, write_volume, RawHeader, VolumeFormat,
};
pub use morphology::{
    centroid, connected_components, dilate_in_plane, erode_in_plane, skeletonize, Centroid, Connectivity, Labels,
};
pub use nifti::{read_nifti, write_nifti};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("data-length mismatch: header expects {expected} voxels, payload has {actual}")]
    DataLengthMismatch { expected: usize, actual: usize },
    #[error("unsupported datatype: {0}")]
    UnsupportedDatatype(String),
    #[error("invalid dims {0:?}: every axis must be at least 1")]
    InvalidDims([usize; 3]),
    #[error("invalid spacing {0:?}: every axis must be positive and finite")]
    InvalidSpacing([f64; 3]),
    #[error("non-finite voxel value at offset {0}")]
    NonFinite(usize),
    #[error("dims mismatch: expected {expected:?}, got {actual:?}")]
    DimsMismatch { expected: [usize; 3], actual: [usize; 3] },
    #[error("bounding box {bbox:?} out of range for dims {dims:?}")]
    BoxOutOfRange { bbox: BoundingBox, dims: [usize; 3] },
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("mask is empty")]
    EmptyMask,
}

impl VolumeError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        VolumeError::Io { path: path.display().to_string(), source }
    }
}
