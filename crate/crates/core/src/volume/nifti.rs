//! Minimal single-file NIfTI-1 (`.nii`, uncompressed) reader and writer.
//!
//! Only the fields needed to recover a scalar grid are interpreted: `dim`,
//! `datatype`, `pixdim`, `vox_offset` and the `scl_slope`/`scl_inter` pair.
//! NIfTI stores x fastest, which matches the in-memory z-major layout with
//! `dim[1..=3] = (width, height, depth)`.

use std::fs;
use std::path::Path;

use super::{Dims, Spacing, Volume, VolumeError};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[at..at + N]);
        if matches!(self.endian, Endian::Big) {
            b.reverse();
        }
        b
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }
}

pub fn read_nifti(path: &Path) -> Result<Volume, VolumeError> {
    let buf = fs::read(path).map_err(|e| VolumeError::io(path, e))?;
    parse_nifti(&buf)
}

pub(crate) fn parse_nifti(buf: &[u8]) -> Result<Volume, VolumeError> {
    if buf.len() < HEADER_SIZE {
        return Err(VolumeError::MalformedHeader(format!("file too short ({} bytes)", buf.len())));
    }
    let size_le = i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]);
    let size_be = i32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]);
    let endian = match (size_le, size_be) {
        (348, _) => Endian::Little,
        (_, 348) => Endian::Big,
        _ => return Err(VolumeError::MalformedHeader(format!("sizeof_hdr = {size_le}"))),
    };
    if &buf[344..347] != b"n+1" {
        return Err(VolumeError::MalformedHeader("missing n+1 magic (only single-file NIfTI-1)".into()));
    }
    let r = Reader { buf, endian };

    let ndim = r.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(VolumeError::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let mut dim = [1usize; 7];
    for (i, d) in dim.iter_mut().enumerate().take(ndim as usize) {
        let v = r.i16(42 + 2 * i);
        if v < 1 {
            return Err(VolumeError::MalformedHeader(format!("dim[{}] = {v}", i + 1)));
        }
        *d = v as usize;
    }
    if dim[3..].iter().any(|&d| d != 1) {
        return Err(VolumeError::MalformedHeader("only 3D scalar volumes are supported".into()));
    }
    let dims = Dims::new(dim[2], dim[1], dim[0]);

    let pix = |i: usize| {
        let p = r.f32(76 + 4 * i).abs() as f64;
        if p > 0.0 && p.is_finite() {
            p
        } else {
            1.0
        }
    };
    let spacing = Spacing::new(pix(3), pix(2), pix(1));

    let datatype = r.i16(70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(VolumeError::UnsupportedDatatype(format!("nifti datatype {other}"))),
    };
    let offset = r.f32(108);
    let offset = if offset >= HEADER_SIZE as f32 { offset as usize } else { DATA_OFFSET };
    let available = buf.len().saturating_sub(offset) / width;
    if available < dims.len() {
        return Err(VolumeError::DataLengthMismatch { expected: dims.len(), actual: available });
    }

    let slope = r.f32(112);
    let inter = r.f32(116);
    let scale = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);

    let payload = Reader { buf: &buf[offset..], endian };
    let mut data = Vec::with_capacity(dims.len());
    for i in 0..dims.len() {
        let at = i * width;
        let v = match datatype {
            DT_UINT8 => payload.buf[at] as f32,
            DT_INT16 => payload.i16(at) as f32,
            DT_INT32 => i32::from_le_bytes(payload.bytes(at)) as f32,
            DT_FLOAT32 => payload.f32(at),
            _ => f64::from_le_bytes(payload.bytes(at)) as f32,
        };
        let v = if scale { v * slope + inter } else { v };
        if !v.is_finite() {
            return Err(VolumeError::NonFinite(i));
        }
        data.push(v);
    }
    Volume::from_vec(dims, spacing, data)
}

pub(crate) fn encode_nifti(v: &Volume) -> Vec<u8> {
    let mut h = vec![0u8; DATA_OFFSET];
    let put_i16 = |h: &mut [u8], at: usize, x: i16| h[at..at + 2].copy_from_slice(&x.to_le_bytes());
    let put_f32 = |h: &mut [u8], at: usize, x: f32| h[at..at + 4].copy_from_slice(&x.to_le_bytes());
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let d = v.dims();
    let s = v.spacing();
    put_i16(&mut h, 40, 3);
    put_i16(&mut h, 42, d.width as i16);
    put_i16(&mut h, 44, d.height as i16);
    put_i16(&mut h, 46, d.depth as i16);
    for i in 4..8 {
        put_i16(&mut h, 40 + 2 * i, 1);
    }
    put_i16(&mut h, 70, DT_FLOAT32);
    put_i16(&mut h, 72, 32);
    put_f32(&mut h, 76, 1.0);
    put_f32(&mut h, 80, s.x as f32);
    put_f32(&mut h, 84, s.y as f32);
    put_f32(&mut h, 88, s.z as f32);
    put_f32(&mut h, 108, DATA_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    h[344..348].copy_from_slice(b"n+1\0");
    for x in v.data() {
        h.extend_from_slice(&x.to_le_bytes());
    }
    h
}

pub fn write_nifti(v: &Volume, path: &Path) -> Result<(), VolumeError> {
    if [v.dims().depth, v.dims().height, v.dims().width].iter().any(|&n| n > i16::MAX as usize) {
        return Err(VolumeError::MalformedHeader("axis too long for NIfTI-1".into()));
    }
    fs::write(path, encode_nifti(v)).map_err(|e| VolumeError::io(path, e))
}
