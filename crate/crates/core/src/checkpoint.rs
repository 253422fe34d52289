//! Versioned binary container for trained parameters.
//!
//! Layout: the magic line `BMARL-CKPT`, one line of JSON header (format
//! version, kind, free-form metadata, tensor directory), then every tensor's
//! values as little-endian `f64` in directory order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Params;

const MAGIC: &str = "BMARL-CKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub metadata: serde_json::Value,
    tensors: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, metadata: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.tensors.push((name.into(), values));
    }

    pub fn push_params<P: Params + ?Sized>(&mut self, name: impl Into<String>, module: &P) {
        self.push(name, module.flat());
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Usage(format!("checkpoint has no tensor {name:?}")))
    }

    /// Copies tensor `name` into `module`, checking the parameter count.
    pub fn load_params<P: Params + ?Sized>(&self, name: &str, module: &mut P) -> Result<()> {
        module.set_flat(self.get(name)?)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let header = Header {
            version: VERSION,
            kind: self.kind.clone(),
            metadata: self.metadata.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, v)| TensorEntry {
                    name: name.clone(),
                    len: v.len(),
                })
                .collect(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for (_, values) in &self.tensors {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut reader = BufReader::new(fs::File::open(path)?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        line.clear();
        reader.read_line(&mut line)?;
        let header: Header =
            serde_json::from_str(line.trim_end()).map_err(|_| corrupt("unreadable header"))?;
        if header.version != VERSION {
            return Err(Error::Version {
                found: header.version,
                expected: VERSION,
            });
        }
        let mut body = Vec::new();
        reader.read_to_end(&mut body)?;
        let total: usize = header.tensors.iter().map(|t| t.len).sum();
        if body.len() != total * 8 {
            return Err(corrupt("payload length does not match the tensor directory"));
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let values = body[offset..offset + entry.len * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            offset += entry.len * 8;
            tensors.push((entry.name, values));
        }
        Ok(Self {
            kind: header.kind,
            metadata: header.metadata,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut c = Checkpoint::new("test", json!({"env": "oracle", "agent": "shared"}));
        c.push("w", vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI]);
        c.push("empty", vec![]);
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.metadata["agent"], "shared");
        let w = back.get("w").unwrap();
        for (a, b) in w.iter().zip(c.get("w").unwrap()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(back.get("missing").is_err());
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut c = Checkpoint::new("test", json!({}));
        c.push("w", vec![1.0, 2.0]);
        c.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Corrupt { .. })));
        fs::write(&path, b"hello\n").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Corrupt { .. })));
    }
}
