//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, u32 format version, u64 header length, a JSON
//! header, then every tensor as little-endian `f64` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"GZLBCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Header {
    format_version: u32,
    kind: String,
    architecture_hash: String,
    seed: u64,
    epoch: u64,
    global_step: u64,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub architecture_hash: String,
    pub seed: u64,
    pub epoch: u64,
    pub global_step: u64,
    /// Free-form metadata such as the configuration that produced it.
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, architecture_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            kind: kind.into(),
            architecture_hash: architecture_hash.into(),
            seed,
            epoch: 0,
            global_step: 0,
            meta: serde_json::Value::Null,
            tensors: Vec::new(),
        }
    }

    pub fn push_group(&mut self, prefix: &str, items: impl IntoIterator<Item = (String, Tensor)>) {
        self.tensors
            .extend(items.into_iter().map(|(n, t)| (format!("{prefix}/{n}"), t)));
    }

    /// Tensors under `prefix/`, with the prefix stripped, in stored order.
    pub fn group(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let lead = format!("{prefix}/");
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&lead).map(|s| (s.to_string(), t.clone())))
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            architecture_hash: self.architecture_hash.clone(),
            seed: self.seed,
            epoch: self.epoch,
            global_step: self.global_step,
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.numel() * 8).sum();
        let mut buf = Vec::with_capacity(20 + json.len() + payload);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |why: &str| Error::checkpoint(path, why.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a gazelab checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!(
                "format version {version} unsupported (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| bad(&format!("corrupt header: {e}")))?;
        let mut offset = 20 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| bad(&format!("truncated data for {}", entry.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((entry.name.clone(), Tensor::from_vec(entry.shape.clone(), data)));
            offset += 8 * n;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            kind: header.kind,
            architecture_hash: header.architecture_hash,
            seed: header.seed,
            epoch: header.epoch,
            global_step: header.global_step,
            meta: header.meta,
            tensors,
        })
    }

    /// Loads and checks kind and architecture hash.
    pub fn load_expecting(path: &Path, kind: &str, architecture_hash: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.kind != kind {
            return Err(Error::checkpoint(
                path,
                format!("holds a {:?}, expected {kind:?}", ck.kind),
            ));
        }
        if ck.architecture_hash != architecture_hash {
            return Err(Error::checkpoint(
                path,
                format!(
                    "architecture hash {} does not match {architecture_hash}",
                    ck.architecture_hash
                ),
            ));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut ck = Checkpoint::new("k", "h", 7);
        ck.epoch = 3;
        ck.meta = serde_json::json!({"x": 1});
        ck.push_group(
            "g",
            vec![("w".to_string(), Tensor::from_vec(vec![2], vec![0.1 + 0.2, -1e-300]))],
        );
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert_eq!(ck.group("g")[0].0, "w");
    }

    #[test]
    fn rejects_corruption_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let ck = Checkpoint::new("k", "h", 7);
        ck.save(&path).unwrap();
        assert!(matches!(
            Checkpoint::load_expecting(&path, "k", "other"),
            Err(Error::Checkpoint { .. })
        ));
        assert!(Checkpoint::load_expecting(&path, "z", "h").is_err());
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint { .. })));
        fs::write(&path, b"junk").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
