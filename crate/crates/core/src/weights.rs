//! `.lmkw` weight container and the ordered [`WeightStore`].
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "LMKW"
//! version    u32      1
//! count      u64      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   dtype    u8       0 = f32, 1 = f16
//!   rank     u8
//!   extents  rank x u64
//!   data     row-major little-endian elements
//!   padding  zero bytes up to the next 8-byte file offset
//! crc32      u32      IEEE CRC-32 of every preceding byte
//! ```
//!
//! Canonical tensor names follow `stage{i}.{block}.{layer}.{param}` for the
//! backbone (`stage0` is the stem) and `head.0.{layer}.{param}` for the
//! heatmap generator; see [`crate::model::plan`] for the full list.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use half::f16;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor, MAX_RANK};

pub const MAGIC: [u8; 4] = *b"LMKW";
pub const FORMAT_VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "lmkw";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid("weight_store", format!("duplicate tensor name `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    /// Replaces an existing tensor in place, keeping its position.
    pub fn replace(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let i = *self.index.get(name).ok_or_else(|| Error::MissingWeight(name.to_string()))?;
        self.entries[i].1 = tensor;
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        let i = self.index.remove(name)?;
        let (_, t) = self.entries.remove(i);
        for (n, _) in &self.entries[i..] {
            *self.index.get_mut(n).expect("indexed") -= 1;
        }
        Some(t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1).ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Copy with every tensor stored as half precision.
    pub fn to_f16(&self) -> WeightStore {
        self.map_tensors(Tensor::to_f16)
    }

    pub fn to_f32(&self) -> WeightStore {
        self.map_tensors(Tensor::to_f32)
    }

    fn map_tensors(&self, f: impl Fn(&Tensor) -> Tensor) -> WeightStore {
        WeightStore { entries: self.entries.iter().map(|(n, t)| (n.clone(), f(t))).collect(), index: self.index.clone() }
    }

    /// Bitwise equality including order, names, dtypes and payloads.
    pub fn bit_eq(&self, other: &WeightStore) -> bool {
        self.entries.len() == other.entries.len() && self.entries.iter().zip(&other.entries).all(|((a, x), (b, y))| a == b && x.bit_eq(y))
    }

    /// CRC-32 of the encoded container body; equals the trailer of the file
    /// [`WeightStore::save`] would write.
    pub fn checksum(&self) -> u32 {
        let bytes = self.to_bytes();
        u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.total_elements() * 4 + self.len() * 64);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match t.dtype() {
                DType::F32 => 0,
                DType::F16 => 1,
            });
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.to_le_bytes());
            while out.len() % 8 != 0 {
                out.push(0);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<WeightStore> {
        if bytes.len() < 4 {
            return Err(Error::Truncated("magic"));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if bytes.len() < 20 {
            return Err(Error::Truncated("header"));
        }
        let body_len = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..body_len]);
        if stored != computed {
            return Err(Error::CrcMismatch { stored, computed });
        }
        let mut r = Reader { bytes: &bytes[..body_len], pos: 8 };
        let count = r.u64("tensor count")?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|e| Error::Malformed(format!("tensor name is not UTF-8: {e}")))?
                .to_string();
            let dtype = match r.u8("dtype")? {
                0 => DType::F32,
                1 => DType::F16,
                other => return Err(Error::Malformed(format!("unknown dtype tag {other} for `{name}`"))),
            };
            let rank = r.u8("rank")? as usize;
            if rank == 0 || rank > MAX_RANK {
                return Err(Error::Malformed(format!("rank {rank} for `{name}`")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64("extent")?;
                shape.push(usize::try_from(d).map_err(|_| Error::Malformed(format!("extent {d} too large")))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Malformed(format!("element count overflow for `{name}`")))?;
            let nbytes = n.checked_mul(dtype.size_of()).ok_or_else(|| Error::Malformed(format!("payload size overflow for `{name}`")))?;
            let raw = r.take(nbytes, "tensor data")?;
            let tensor = match dtype {
                DType::F32 => {
                    Tensor::new(&shape, raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
                }
                DType::F16 => {
                    Tensor::from_f16(&shape, raw.chunks_exact(2).map(|c| f16::from_le_bytes(c.try_into().expect("2 bytes"))).collect())
                }
            }
            .map_err(|e| Error::Malformed(format!("tensor `{name}`: {e}")))?;
            let pad = (8 - r.pos % 8) % 8;
            r.take(pad, "padding")?;
            store.insert(name, tensor).map_err(|e| Error::Malformed(e.to_string()))?;
        }
        if r.pos != body_len {
            return Err(Error::Malformed(format!("{} trailing bytes before CRC", body_len - r.pos)));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<WeightStore> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        WeightStore::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(what))?;
        if end > self.bytes.len() {
            return Err(Error::Truncated(what));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Expected tensor name and shape, as produced by the model's layer plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    Missing { name: String },
    Extra { name: String },
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValidationIssue::Missing { name } => write!(f, "missing: {name}"),
            ValidationIssue::Extra { name } => write!(f, "extra: {name}"),
            ValidationIssue::ShapeMismatch { name, expected, found } => {
                write!(f, "shape mismatch: {name} expected {expected:?} found {found:?}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn missing(&self) -> impl Iterator<Item = &str> {
        self.issues.iter().filter_map(|i| match i {
            ValidationIssue::Missing { name } => Some(name.as_str()),
            _ => None,
        })
    }
}

/// Compares a store against the expected parameter list.
pub fn validate(store: &WeightStore, expected: &[ParamSpec]) -> ValidationReport {
    let mut issues = Vec::new();
    for p in expected {
        match store.get(&p.name) {
            Err(_) => issues.push(ValidationIssue::Missing { name: p.name.clone() }),
            Ok(t) if t.shape() != p.shape.as_slice() => {
                issues.push(ValidationIssue::ShapeMismatch { name: p.name.clone(), expected: p.shape.clone(), found: t.shape().to_vec() })
            }
            Ok(_) => {}
        }
    }
    let known: std::collections::HashSet<&str> = expected.iter().map(|p| p.name.as_str()).collect();
    for name in store.names() {
        if !known.contains(name) {
            issues.push(ValidationIssue::Extra { name: name.to_string() });
        }
    }
    ValidationReport { issues }
}
