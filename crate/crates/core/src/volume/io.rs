use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{nifti, Dims, Mask, Spacing, Volume, VolumeError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeFormat {
    /// Little-endian f32 payload plus a `.json` sidecar header.
    RawJson,
    /// Single-file, uncompressed NIfTI-1.
    Nifti1,
}

impl VolumeFormat {
    /// Guesses the format from the file extension (`.nii` → NIfTI, anything else → raw).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nii") => VolumeFormat::Nifti1,
            _ => VolumeFormat::RawJson,
        }
    }
}

/// Sidecar header: `{"dims":[d,h,w],"spacing":[sz,sy,sx],"dtype":"f32","order":"zyx"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: String,
    pub order: String,
}

impl RawHeader {
    pub fn for_volume(v: &Volume) -> Self {
        Self {
            dims: v.dims().as_array(),
            spacing: v.spacing().as_array(),
            dtype: "f32".into(),
            order: "zyx".into(),
        }
    }

    fn validate(&self) -> Result<(), VolumeError> {
        if self.dtype != "f32" {
            return Err(VolumeError::UnsupportedDatatype(self.dtype.clone()));
        }
        if self.order != "zyx" {
            return Err(VolumeError::MalformedHeader(format!("unsupported order {:?}", self.order)));
        }
        Ok(())
    }
}

/// `scan.raw` → `scan.json`.
pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_raw(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.data().len() * 4);
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Builds a volume from a parsed header and a little-endian f32 payload.
pub fn decode_raw(header: &RawHeader, payload: &[u8]) -> Result<Volume, VolumeError> {
    header.validate()?;
    let dims = Dims::from(header.dims);
    if payload.len() % 4 != 0 {
        return Err(VolumeError::DataLengthMismatch { expected: dims.len(), actual: payload.len() / 4 });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(VolumeError::NonFinite(i));
    }
    Volume::from_vec(dims, Spacing::from(header.spacing), values)
}

pub fn read_volume(path: &Path, format: VolumeFormat) -> Result<Volume, VolumeError> {
    match format {
        VolumeFormat::RawJson => {
            let hp = header_path(path);
            let text = fs::read_to_string(&hp).map_err(|e| VolumeError::io(&hp, e))?;
            let header: RawHeader =
                serde_json::from_str(&text).map_err(|e| VolumeError::MalformedHeader(e.to_string()))?;
            let payload = fs::read(path).map_err(|e| VolumeError::io(path, e))?;
            decode_raw(&header, &payload)
        }
        VolumeFormat::Nifti1 => nifti::read_nifti(path),
    }
}

pub fn write_volume(v: &Volume, path: &Path, format: VolumeFormat) -> Result<(), VolumeError> {
    match format {
        VolumeFormat::RawJson => {
            let header = serde_json::to_string(&RawHeader::for_volume(v))
                .map_err(|e| VolumeError::MalformedHeader(e.to_string()))?;
            let hp = header_path(path);
            fs::write(&hp, header).map_err(|e| VolumeError::io(&hp, e))?;
            fs::write(path, encode_raw(v)).map_err(|e| VolumeError::io(path, e))
        }
        VolumeFormat::Nifti1 => nifti::write_nifti(v, path),
    }
}

/// Masks are stored as 0/1 float volumes.
pub fn write_mask(m: &Mask, path: &Path, format: VolumeFormat) -> Result<(), VolumeError> {
    write_volume(&m.to_volume(), path, format)
}
