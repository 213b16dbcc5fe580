//! Binary checkpoint: `DINCKPT`, version, tensor count, then named tensors.
//!
//! Each tensor is stored as a u32 name length, the UTF-8 name, a u32 rank,
//! u32 dims and the f32 payload, all little-endian. Optimizer moments follow
//! the parameters under reserved names, and the JSON metadata is stored as
//! one byte per element in the reserved tensor [`META_NAME`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optim::{Adam, AdamConfig};
use crate::train::{EpochRecord, TrainConfig};
use crate::{Model, NetConfig, NetError, Tensor};

pub const MAGIC: &[u8; 7] = b"DINCKPT";
pub const VERSION: u32 = 1;
pub const META_NAME: &str = "__meta__";
const ADAM_M: &str = "__adam_m__/";
const ADAM_V: &str = "__adam_v__/";

/// Everything besides tensors that a checkpoint records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub net: NetConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    /// Completed epochs when the checkpoint was written.
    #[serde(default)]
    pub epoch: usize,
    #[serde(default)]
    pub lr: f64,
    #[serde(default)]
    pub adam: Option<AdamState>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
}

impl CheckpointMeta {
    pub fn new(net: NetConfig) -> Self {
        Self { net, train: None, epoch: 0, lr: 0.0, adam: None, history: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Model parameters in network order.
    pub params: Vec<(String, Tensor)>,
    /// First and second Adam moments, aligned with `params`.
    pub moments: Option<(Vec<Tensor>, Vec<Tensor>)>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, adam: Option<&Adam>, mut meta: CheckpointMeta) -> Self {
        meta.net = model.config().clone();
        meta.adam = adam.map(|a| AdamState { config: a.config, step: a.step });
        let params = model.params().names().iter().cloned().zip(model.params().tensors().iter().cloned()).collect();
        let moments = adam.map(|a| (a.m.clone(), a.v.clone()));
        Self { meta, params, moments }
    }

    /// Rebuilds the model, validating that every parameter is present once
    /// with the expected shape, plus the optimizer when moments were saved.
    pub fn into_model(self) -> Result<(Model, Option<Adam>), NetError> {
        let mut model = Model::new(self.meta.net.clone())?;
        model.load_params(self.params)?;
        let adam = match (self.moments, self.meta.adam) {
            (Some((m, v)), Some(state)) => {
                let params = model.params().tensors();
                let fits = |ts: &[Tensor]| ts.len() == params.len() && ts.iter().zip(params).all(|(a, b)| a.shape() == b.shape());
                if !fits(&m) || !fits(&v) {
                    return Err(NetError::Checkpoint("optimizer moments do not match the parameters".into()));
                }
                Some(Adam { config: state.config, step: state.step, m, v })
            }
            (None, _) => None,
            (Some(_), None) => return Err(NetError::Checkpoint("optimizer moments without optimizer state".into())),
        };
        Ok((model, adam))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NetError> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        let meta = Tensor::from_vec(&[meta.len().max(1)], pad_bytes(meta)).expect("sized");
        let mut entries: Vec<(String, &Tensor)> = self.params.iter().map(|(n, t)| (n.clone(), t)).collect();
        if let Some((m, v)) = &self.moments {
            for ((name, _), t) in self.params.iter().zip(m) {
                entries.push((format!("{ADAM_M}{name}"), t));
            }
            for ((name, _), t) in self.params.iter().zip(v) {
                entries.push((format!("{ADAM_V}{name}"), t));
            }
        }
        entries.push((META_NAME.to_string(), &meta));

        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&u32_of(entries.len())?.to_le_bytes())?;
        for (name, t) in entries {
            w.write_all(&u32_of(name.len())?.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&u32_of(t.shape().len())?.to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&u32_of(d)?.to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(4 * t.len());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NetError> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NetError::Checkpoint("not a checkpoint file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(NetError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let (mut params, mut m, mut v, mut meta) = (Vec::new(), Vec::new(), Vec::new(), None);
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| NetError::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; 4 * n];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| NetError::Checkpoint(format!("{name}: {e}")))?;
            if name == META_NAME {
                if meta.is_some() {
                    return Err(NetError::Checkpoint("duplicate metadata".into()));
                }
                meta = Some(t);
            } else if let Some(p) = name.strip_prefix(ADAM_M) {
                m.push((p.to_string(), t));
            } else if let Some(p) = name.strip_prefix(ADAM_V) {
                v.push((p.to_string(), t));
            } else {
                if params.iter().any(|(n, _): &(String, Tensor)| *n == name) {
                    return Err(NetError::Checkpoint(format!("duplicate parameter {name}")));
                }
                params.push((name, t));
            }
        }
        let meta = meta.ok_or_else(|| NetError::Checkpoint("missing metadata".into()))?;
        let bytes = unpad_bytes(meta.data())?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes).map_err(|e| NetError::Checkpoint(format!("metadata: {e}")))?;
        let aligned = |ms: &[(String, Tensor)]| ms.len() == params.len() && ms.iter().zip(&params).all(|(a, b)| a.0 == b.0);
        let moments = match (m.is_empty() && v.is_empty(), aligned(&m) && aligned(&v)) {
            (true, _) => None,
            (false, true) => Some((m.into_iter().map(|x| x.1).collect(), v.into_iter().map(|x| x.1).collect())),
            (false, false) => return Err(NetError::Checkpoint("optimizer moments do not match the parameters".into())),
        };
        Ok(Self { meta, params, moments })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn u32_of(v: usize) -> Result<u32, NetError> {
    u32::try_from(v).map_err(|_| NetError::Checkpoint(format!("{v} does not fit in u32")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Bytes as f32 values; an empty payload becomes a single NUL.
fn pad_bytes(bytes: Vec<u8>) -> Vec<f32> {
    if bytes.is_empty() {
        vec![0.0]
    } else {
        bytes.into_iter().map(f32::from).collect()
    }
}

fn unpad_bytes(values: &[f32]) -> Result<Vec<u8>, NetError> {
    values
        .iter()
        .filter(|&&v| v != 0.0)
        .map(|&v| {
            if v.fract() == 0.0 && (1.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(NetError::Checkpoint("corrupt metadata bytes".into()))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::DimVariant;

    fn small(variant: DimVariant) -> NetConfig {
        NetConfig { in_dims: [2, 16, 16], channels: [2, 3, 3, 4, 4], dim_variant: variant, init_seed: 3, ..Default::default() }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model: Model = Model::new(small(DimVariant::V2)).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), model.params().tensors());
        adam.step = 17;
        adam.m[0].data_mut()[0] = 0.25;
        let mut meta = CheckpointMeta::new(model.config().clone());
        meta.epoch = 4;
        meta.lr = 6e-5;
        let ck = Checkpoint::from_model(&model, Some(&adam), meta);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..7], MAGIC);
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        let (loaded, opt) = back.into_model().unwrap();
        assert_eq!(loaded.params(), model.params());
        let opt = opt.unwrap();
        assert_eq!((opt.step, opt.m[0].data()[0]), (17, 0.25));
    }

    #[test]
    fn rejects_corruption() {
        let model: Model = Model::new(small(DimVariant::Full)).unwrap();
        let ck = Checkpoint::from_model(&model, None, CheckpointMeta::new(model.config().clone()));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[7] = 9;
        assert!(Checkpoint::read_from(bad.as_slice()).is_err());
        assert!(Checkpoint::read_from(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected_on_load() {
        let model: Model = Model::new(small(DimVariant::Full)).unwrap();
        let mut ck = Checkpoint::from_model(&model, None, CheckpointMeta::new(model.config().clone()));
        ck.meta.net.channels[0] = 5;
        assert!(ck.into_model().is_err());
    }
}
