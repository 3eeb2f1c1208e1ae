//! Little-endian tensor container used for network checkpoints (`AHDR`)
//! and the perceptual extractor weights (`AHPX`).
//!
//! ```text
//! magic      4 bytes
//! version    u32
//! config     u32 byte length, then UTF-8 "key=value\n" lines
//! count      u32 number of tensors
//! per tensor u32 name length, name bytes, u32 rank, rank × u32 extents,
//!            product(extents) × f32
//! ```
//!
//! Nothing may follow the last tensor.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AHDR";
pub const EXTRACTOR_MAGIC: [u8; 4] = *b"AHPX";
pub const VERSION: u32 = 1;

const FORMAT: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    /// Ordered so that encoding is deterministic.
    pub config: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Container {
    pub fn new(magic: [u8; 4]) -> Self {
        Self {
            magic,
            config: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    /// Parses config entry `key`.
    pub fn get<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self
            .config
            .get(key)
            .ok_or_else(|| Error::Validation(format!("checkpoint config lacks {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::Validation(format!("checkpoint config {key}={raw:?} is malformed")))
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text: String = self
            .config
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decodes a container whose magic must equal `magic`.
    pub fn decode(bytes: &[u8], magic: [u8; 4]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let m = r.take(4)?;
        if m != magic {
            return Err(Error::format(
                FORMAT,
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(m),
                    String::from_utf8_lossy(&magic)
                ),
            ));
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(FORMAT, at, format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(FORMAT, at, "config block is not UTF-8"))?;
        let mut config = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(FORMAT, at, format!("bad config line {line:?}")))?;
            config.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::format(FORMAT, at, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::format(FORMAT, at, format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= bytes.len() / 4)
                .ok_or_else(|| Error::format(FORMAT, at, format!("tensor {name} is too large")))?;
            let payload = r.take(numel * 4)?;
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                FORMAT,
                r.pos,
                format!("{} trailing bytes after last tensor", bytes.len() - r.pos),
            ));
        }
        Ok(Self {
            magic,
            config,
            tensors,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .pos
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.pos..end))
            .ok_or_else(|| Error::format(FORMAT, self.bytes.len(), "truncated file"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
