//! Checkpoint file: `"SMAE"`, u32 LE version, u64 LE header length, JSON
//! header, then every parameter as little-endian `f32` in header order.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SmaeConfig, SmaeModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SMAE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: SmaeConfig,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// A model plus free-form training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SmaeModel,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: SmaeModel) -> Self {
        Checkpoint {
            model,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let header = Header {
            config: m.config().clone(),
            params: m
                .names()
                .iter()
                .zip(m.params())
                .map(|(name, t)| ParamEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let payload_len: usize = m.params().iter().map(Tensor::len).sum::<usize>() * 4;
        let mut out = Vec::with_capacity(16 + header.len() + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in m.params() {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint. Parameters are matched by name, so the header may
    /// list them in any order.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u32::from_le_bytes(
            bytes
                .get(4..8)
                .ok_or_else(|| Error::Header("truncated before version".into()))?
                .try_into()
                .expect("4 bytes"),
        );
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(
            bytes
                .get(8..16)
                .ok_or_else(|| Error::Header("truncated before header length".into()))?
                .try_into()
                .expect("8 bytes"),
        ) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Header(format!("header of {header_len} bytes runs past end of file")))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Header(e.to_string()))?;

        let payload = &bytes[header_end..];
        let expected: usize = header
            .params
            .iter()
            .map(|p| p.shape.iter().product::<usize>() * 4)
            .sum();
        if payload.len() != expected {
            return Err(Error::PayloadLength {
                expected,
                found: payload.len(),
            });
        }

        let mut named = HashMap::with_capacity(header.params.len());
        let mut offset = 0;
        for entry in &header.params {
            let n: usize = entry.shape.iter().product();
            let data = payload[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            offset += 4 * n;
            if named
                .insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)
                .is_some()
            {
                return Err(Error::Header(format!("duplicate parameter {}", entry.name)));
            }
        }
        Ok(Checkpoint {
            model: SmaeModel::from_parts(header.config, named)?,
            metadata: header.metadata,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
