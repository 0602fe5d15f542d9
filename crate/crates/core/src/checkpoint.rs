//! Named tensor maps and their on-disk format.
//!
//! Layout:
//!
//! ```text
//! bytes 0..8    magic "LIFORGE1"
//! bytes 8..16   header length H, u64 little-endian
//! bytes 16..16+H  UTF-8 JSON header: {"meta": {...}, "tensors": [{name, shape, offset}, ...]}
//! remainder     f32 little-endian payload, tensors contiguous in header order
//! ```
//!
//! Offsets are byte offsets into the payload. Tensors are written in name
//! order, so the same checkpoint always produces the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LIFORGE1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::arg(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub step: u64,
    pub seed: u64,
    pub config_digest: String,
    /// Distinct training steps of the checkpoints this one was averaged from.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_from: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<HeaderEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Self {
            tensors: BTreeMap::new(),
            meta,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Equality that distinguishes `0.0` from `-0.0` and compares NaNs by payload.
    pub fn bitwise_eq(&self, other: &Checkpoint) -> bool {
        self.meta == other.meta
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bitwise_eq(tb))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = HeaderEntry {
                    name: name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += 4 * t.values.len() as u64;
                e
            })
            .collect();
        let header = Header {
            meta: self.meta.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).expect("checkpoint header serializes");

        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(Error::format("magic", "expected LIFORGE1"));
        }
        let len_bytes: [u8; 8] = bytes
            .get(8..16)
            .and_then(|s| s.try_into().ok())
            .ok_or_else(|| Error::format("header_length", "file ends before header length"))?;
        let header_len = u64::from_le_bytes(len_bytes);
        let header_end = 16u64
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| {
                Error::format(
                    "header_length",
                    format!("{header_len} exceeds remaining {} bytes", bytes.len() - 16),
                )
            })? as usize;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::format("header", e.to_string()))?;

        let payload = &bytes[header_end..];
        let mut tensors = BTreeMap::new();
        let mut expected_offset = 0u64;
        for entry in header.tensors {
            if entry.offset != expected_offset {
                return Err(Error::format(
                    format!("tensors.{}.offset", entry.name),
                    format!("expected {expected_offset}, found {}", entry.offset),
                ));
            }
            let count = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| {
                    Error::format(format!("tensors.{}.shape", entry.name), "element count overflows")
                })?;
            let start = entry.offset as usize;
            let end = start
                .checked_add(count * 4)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| {
                    Error::format(
                        format!("tensors.{}.shape", entry.name),
                        format!(
                            "shape {:?} needs {} payload bytes from offset {start}, only {} present",
                            entry.shape,
                            count * 4,
                            payload.len().saturating_sub(start)
                        ),
                    )
                })?;
            let values = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            expected_offset = end as u64;
            let name = entry.name;
            if tensors
                .insert(name.clone(), Tensor { shape: entry.shape, values })
                .is_some()
            {
                return Err(Error::format(format!("tensors.{name}"), "duplicate tensor name"));
            }
        }
        if expected_offset != payload.len() as u64 {
            return Err(Error::format(
                "payload",
                format!(
                    "header describes {expected_offset} bytes, payload has {}",
                    payload.len()
                ),
            ));
        }
        Ok(Self {
            tensors,
            meta: header.meta,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
