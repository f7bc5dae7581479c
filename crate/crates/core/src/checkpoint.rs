//! Versioned binary container for model parameters.
//!
//! Layout: 8-byte magic `IDRKCKPT`, `u32` format version, `u32` header length,
//! a JSON header `{kind, config, tensors: [{name, shape}]}`, then every tensor
//! as little-endian `f64` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"IDRKCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub config: Value,
    pub tensors: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub data: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: Value) -> Self {
        Checkpoint {
            header: Header {
                kind: kind.to_string(),
                config,
                tensors: Vec::new(),
            },
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.header.tensors.push(TensorSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
        });
        self.data.push(values.to_vec());
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.header
            .tensors
            .iter()
            .position(|t| t.name == name)
            .map(|i| (self.header.tensors[i].shape.as_slice(), self.data[i].as_slice()))
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.header.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + self.data.iter().map(|d| d.len() * 8).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.data {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut at = 16 + hlen;
        let mut data = Vec::with_capacity(header.tensors.len());
        for spec in &header.tensors {
            let n: usize = spec.shape.iter().product();
            let raw = bytes
                .get(at..at + n * 8)
                .ok_or_else(|| Error::Checkpoint(format!("truncated tensor {:?}", spec.name)))?;
            data.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
            at += n * 8;
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Checkpoint { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
