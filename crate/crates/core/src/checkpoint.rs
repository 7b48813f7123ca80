//! Binary tensor checkpoints.
//!
//! Layout: the 8-byte magic `COINSCKP`, the header length as a little-endian
//! `u64`, a JSON header (format version, dtype, tensor names, shapes and blob
//! offsets, free-form metadata), then every tensor's values back to back as
//! little-endian floats. Writing and reading are exact inverses.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{numel, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"COINSCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the value blob.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Header {
    pub format_version: u32,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub tensors: Vec<(String, Tensor<T>)>,
    pub meta: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.numel();
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.to_string(),
            tensors: entries,
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + offset * T::BYTES);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = read_header(bytes)?;
        if header.dtype != T::DTYPE {
            return Err(Error::Schema(format!(
                "checkpoint dtype {} does not match requested {}",
                header.dtype,
                T::DTYPE
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let blob = &bytes[16 + header_len..];
        let total: usize = header.tensors.iter().map(|e| numel(&e.shape)).sum();
        if blob.len() != total * T::BYTES {
            return Err(Error::Schema(format!(
                "checkpoint blob has {} bytes, header describes {}",
                blob.len(),
                total * T::BYTES
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n = numel(&e.shape);
            let start = e.offset * T::BYTES;
            let data = blob
                .get(start..start + n * T::BYTES)
                .ok_or_else(|| Error::Schema(format!("tensor {} lies outside the blob", e.name)))?
                .chunks_exact(T::BYTES)
                .map(T::read_le)
                .collect();
            tensors.push((e.name, Tensor::new(e.shape, data)?));
        }
        Ok(Self {
            tensors,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Parses only the header, e.g. to inspect the dtype before loading.
pub fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Schema("not a checkpoint file (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let raw = bytes
        .get(16..16 + header_len)
        .ok_or_else(|| Error::Schema("truncated checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(raw)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported checkpoint format version {}",
            header.format_version
        )));
    }
    Ok(header)
}
