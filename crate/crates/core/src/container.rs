//! Single-file artifact container shared by checkpoints and metric bundles.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes
//! version    u32
//! header_len u64
//! header     header_len bytes of UTF-8 JSON
//! blobs      concatenated f64 LE tensors, in header index order
//! ```
//!
//! The JSON header is an object with two keys: `meta` (artifact-specific) and
//! `tensors`, a list of `{name, len}` entries describing the blob section.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    tensors: Vec<TensorEntry>,
}

/// Named tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorMap {
    entries: Vec<(String, Vec<f64>)>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, data: Vec<f64>) {
        self.entries.push((name.into(), data));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(n, d)| (n.as_str(), d.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes and returns a tensor, checking its length when `expected_len` is given.
    pub fn take(&mut self, name: &str, expected_len: Option<usize>) -> Result<Vec<f64>> {
        let pos = self
            .entries
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
        let (_, data) = self.entries.remove(pos);
        if let Some(len) = expected_len {
            if data.len() != len {
                return Err(Error::Format(format!(
                    "tensor `{name}` has {} values, expected {len}",
                    data.len()
                )));
            }
        }
        Ok(data)
    }

    pub fn names(&self) -> BTreeMap<&str, usize> {
        self.entries.iter().map(|(n, d)| (n.as_str(), d.len())).collect()
    }
}

pub fn write_container<M: Serialize>(
    path: &Path,
    magic: &[u8; 8],
    version: u32,
    meta: &M,
    tensors: &TensorMap,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_to(&mut out, magic, version, meta, tensors)?;
    out.flush()?;
    Ok(())
}

pub fn write_to<M: Serialize>(
    out: &mut impl Write,
    magic: &[u8; 8],
    version: u32,
    meta: &M,
    tensors: &TensorMap,
) -> Result<()> {
    let header = Header {
        meta,
        tensors: tensors
            .iter()
            .map(|(n, d)| TensorEntry {
                name: n.to_string(),
                len: d.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(magic)?;
    out.write_all(&version.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, data) in tensors.iter() {
        let mut buf = Vec::with_capacity(data.len() * 8);
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a container, rejecting a wrong magic or a version other than `version`.
pub fn read_container<M: DeserializeOwned>(
    path: &Path,
    magic: &[u8; 8],
    version: u32,
) -> Result<(M, TensorMap)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut inp = BufReader::new(File::open(path)?);
    read_from(&mut inp, magic, version)
}

pub fn read_from<M: DeserializeOwned>(
    inp: &mut impl Read,
    magic: &[u8; 8],
    version: u32,
) -> Result<(M, TensorMap)> {
    let mut m = [0u8; 8];
    read_exact(inp, &mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut b4 = [0u8; 4];
    read_exact(inp, &mut b4)?;
    let found = u32::from_le_bytes(b4);
    if found != version {
        return Err(Error::Format(format!("unsupported version {found}, expected {version}")));
    }
    let mut b8 = [0u8; 8];
    read_exact(inp, &mut b8)?;
    let len = usize::try_from(u64::from_le_bytes(b8))
        .map_err(|_| Error::Format("header length overflows".into()))?;
    let mut json = vec![0u8; len];
    read_exact(inp, &mut json)?;
    let header: Header<M> = serde_json::from_slice(&json)?;
    let mut tensors = TensorMap::new();
    for entry in header.tensors {
        let mut raw = vec![0u8; entry.len * 8];
        read_exact(inp, &mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.insert(entry.name, data);
    }
    let mut rest = [0u8; 1];
    if inp.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok((header.meta, tensors))
}

fn read_exact(inp: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    inp.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated container".into()),
        _ => Error::Io(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTCONT";

    #[test]
    fn round_trip_is_exact() {
        let mut t = TensorMap::new();
        t.insert("a", vec![1.0, -0.1, f64::MIN_POSITIVE, 1e300]);
        t.insert("empty", vec![]);
        let mut buf = Vec::new();
        write_to(&mut buf, MAGIC, 3, &serde_json::json!({"k": 0.1}), &t).unwrap();
        let (meta, back): (serde_json::Value, _) = read_from(&mut buf.as_slice(), MAGIC, 3).unwrap();
        assert_eq!(meta["k"], 0.1);
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_corruption() {
        let mut t = TensorMap::new();
        t.insert("a", vec![1.0, 2.0]);
        let mut buf = Vec::new();
        write_to(&mut buf, MAGIC, 1, &0u8, &t).unwrap();
        let read = |b: &[u8], v| read_from::<u8>(&mut &b[..], MAGIC, v);
        assert!(matches!(read(&buf, 2), Err(Error::Format(_))));
        assert!(matches!(read(&buf[..buf.len() - 1], 1), Err(Error::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read(&extra, 1), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read(&bad, 1), Err(Error::Format(_))));
    }

    #[test]
    fn take_checks_length() {
        let mut t = TensorMap::new();
        t.insert("w", vec![0.0; 3]);
        assert!(t.clone().take("w", Some(4)).is_err());
        assert!(t.clone().take("x", None).is_err());
        assert_eq!(t.take("w", Some(3)).unwrap().len(), 3);
        assert!(t.is_empty());
    }
}
