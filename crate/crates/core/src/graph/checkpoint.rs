//! Flat binary weight files.
//!
//! Layout (little endian): the magic `ISGW`, a `u32` format version, a
//! `u32` length followed by the network configuration as JSON, a `u32`
//! tensor count, then per tensor in name order: `u32` name length, UTF-8
//! name, `u32` rank, `u64` per dimension and the row-major `f64` values.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GraphError, SgcnConfig, SgcnWeights};
use crate::scene::ParamCodec;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ISGW";
const VERSION: u32 = 1;

/// Weights together with everything needed to rebuild the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: SgcnConfig,
    pub codec: ParamCodec,
    pub weights: SgcnWeights,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: SgcnConfig,
    bins: crate::geometry::BinSpecs,
    confidence: f64,
}

fn bad(msg: impl Into<String>) -> GraphError {
    GraphError::Checkpoint(msg.into())
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let header = serde_json::to_vec(&Header {
        config: c.config,
        bins: c.codec.bins,
        confidence: c.codec.confidence,
    })
    .expect("header serializes");
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(c.weights.tensors.len() as u32).to_le_bytes());
    for (name, t) in &c.weights.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GraphError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, GraphError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, GraphError> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(4)? != MAGIC {
        return Err(bad("not a weight file"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = c.u32()? as usize;
    let header: Header = serde_json::from_slice(c.take(hlen)?).map_err(|e| bad(format!("header: {e}")))?;
    let count = c.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let nlen = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
        let rank = c.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("tensor too large"))?;
        let raw = c.take(numel.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("tensor `{name}`: {e}")))?;
        tensors.insert(name, t);
    }
    if c.at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint {
        config: header.config,
        codec: ParamCodec {
            bins: header.bins,
            confidence: header.confidence,
        },
        weights: SgcnWeights { tensors },
    })
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<(), GraphError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(c))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, GraphError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
