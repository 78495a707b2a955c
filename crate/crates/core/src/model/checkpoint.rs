//! Binary checkpoints.
//!
//! Layout (all integers little-endian): `MPSW`, version `u32`, tensor
//! count `u32`; per tensor: name length `u32`, UTF-8 name, rank `u32`,
//! dims `u64` each, `f32` data; trailing `u64` sum of every data byte,
//! wrapping. The first tensor, `meta.arch`, encodes the [`NetConfig`].

use std::path::Path;

use indexmap::IndexMap;

use super::{ModelWeights, NetConfig, Nonlinearity, Normalization, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MPSW";
const META: &str = "meta.arch";

fn encode_config(c: &NetConfig) -> Vec<f32> {
    let nonlin = match c.nonlinearity {
        Nonlinearity::Relu => 0.0,
        Nonlinearity::LeakyRelu => 1.0,
        Nonlinearity::Tanh => 2.0,
    };
    let norm = match c.normalization {
        Normalization::None => 0.0,
    };
    vec![
        c.in_channels as f32,
        c.base_channels as f32,
        c.depth as f32,
        c.out_channels as f32,
        nonlin,
        norm,
        c.convs_per_stage as f32,
    ]
}

fn decode_config(v: &[f32]) -> Result<NetConfig> {
    let bad = || Error::Checkpoint(format!("malformed {META} tensor {v:?}"));
    if v.len() != 7 || v.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
        return Err(bad());
    }
    let nonlinearity = match v[4] as u32 {
        0 => Nonlinearity::Relu,
        1 => Nonlinearity::LeakyRelu,
        2 => Nonlinearity::Tanh,
        _ => return Err(bad()),
    };
    let normalization = match v[5] as u32 {
        0 => Normalization::None,
        _ => return Err(bad()),
    };
    Ok(NetConfig {
        in_channels: v[0] as usize,
        base_channels: v[1] as usize,
        depth: v[2] as usize,
        out_channels: v[3] as usize,
        nonlinearity,
        normalization,
        convs_per_stage: v[6] as usize,
    })
}

pub fn to_bytes(weights: &ModelWeights) -> Vec<u8> {
    let meta = encode_config(weights.config());
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&((weights.len() + 1) as u32).to_le_bytes());
    let mut checksum = 0u64;
    let entries = std::iter::once((META, vec![meta.len()], meta.as_slice()))
        .chain(weights.tensors().map(|(n, t)| (n, t.shape().to_vec(), t.data())));
    for (name, shape, data) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in &shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in data {
            for b in v.to_le_bytes() {
                checksum = checksum.wrapping_add(b as u64);
                out.push(b);
            }
        }
    }
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelWeights> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut checksum = 0u64;
    let mut config = None;
    let mut tensors = IndexMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
        let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        checksum = bytes.iter().fold(checksum, |s, &b| s.wrapping_add(b as u64));
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if name == META {
            config = Some(decode_config(&data)?);
        } else if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    let stored = r.u64()?;
    if stored != checksum {
        return Err(Error::Checkpoint(format!("checksum mismatch: stored {stored}, computed {checksum}")));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let config = config.ok_or_else(|| Error::Checkpoint(format!("missing `{META}` tensor")))?;
    ModelWeights::from_tensors(config, tensors).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn write_checkpoint(path: &Path, weights: &ModelWeights) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_bytes(weights)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelWeights> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_weights;

    #[test]
    fn round_trip_is_byte_identical() {
        let cfg = NetConfig {
            base_channels: 3,
            depth: 2,
            nonlinearity: Nonlinearity::LeakyRelu,
            ..NetConfig::default()
        };
        let w: ModelWeights = init_weights(&cfg, 11).unwrap();
        let a = to_bytes(&w);
        let back = from_bytes(&a).unwrap();
        assert_eq!(back, w);
        assert_eq!(to_bytes(&back), a);
        assert_eq!(&a[..4], b"MPSW");
    }

    #[test]
    fn corruption_detected() {
        let w: ModelWeights = init_weights(&NetConfig { base_channels: 2, depth: 1, ..NetConfig::default() }, 0).unwrap();
        let mut a = to_bytes(&w);
        let k = a.len() - 20;
        a[k] ^= 0x10;
        assert!(matches!(from_bytes(&a), Err(Error::Checkpoint(_))));
        assert!(from_bytes(&a[..a.len() - 1]).is_err());
    }
}
