//! Single-file container: a text header and TOML manifest followed by
//! length-prefixed binary blobs.
//!
//! ```text
//! FSRIR-ARCHIVE <version> <kind>\n
//! <manifest byte length>\n
//! <manifest TOML, including a [[blobs]] index with sizes and SHA-256>
//! per blob: u64 LE length, bytes
//! ```
//!
//! Arrays inside blobs carry their own header: a dtype byte (4 = f32,
//! 8 = f64), a rank byte, `rank` u32 LE dimensions, then row-major LE data.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &str = "FSRIR-ARCHIVE";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    bytes: u64,
    sha256: String,
}

/// Decoded archive: kind tag, manifest table without the blob index, blobs.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub manifest: toml::Table,
    pub blobs: Vec<Blob>,
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl Archive {
    pub fn new(kind: &str, manifest: toml::Table) -> Self {
        Self {
            kind: kind.to_string(),
            manifest,
            blobs: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.blobs.push(Blob { name: name.into(), bytes });
    }

    pub fn blob(&self, name: &str) -> Result<&[u8]> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .map(|b| b.bytes.as_slice())
            .ok_or_else(|| corrupt(format!("archive has no blob {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = self.manifest.clone();
        let index: Vec<BlobEntry> = self
            .blobs
            .iter()
            .map(|b| BlobEntry {
                name: b.name.clone(),
                bytes: b.bytes.len() as u64,
                sha256: sha(&b.bytes),
            })
            .collect();
        let index = toml::Value::try_from(index).map_err(|e| corrupt(format!("blob index: {e}")))?;
        manifest.insert("blobs".into(), index);
        let text = toml::to_string(&manifest).map_err(|e| corrupt(format!("manifest: {e}")))?;
        let mut out = format!("{MAGIC} {VERSION} {}\n{}\n", self.kind, text.len()).into_bytes();
        out.extend_from_slice(text.as_bytes());
        for b in &self.blobs {
            out.extend_from_slice(&(b.bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&b.bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut line = || -> Result<String> {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| corrupt("truncated archive header"))?;
            let s = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| corrupt("header is not text"))?;
            pos += end + 1;
            Ok(s.to_string())
        };
        let header = line()?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 3 || parts[0] != MAGIC {
            return Err(corrupt("not an archive"));
        }
        let version: u32 = parts[1].parse().map_err(|_| corrupt("bad archive version"))?;
        if version != VERSION {
            return Err(corrupt(format!("archive version {version}, expected {VERSION}")));
        }
        let kind = parts[2].to_string();
        let len: usize = line()?.parse().map_err(|_| corrupt("bad manifest length"))?;
        let text = bytes.get(pos..pos + len).ok_or_else(|| corrupt("truncated manifest"))?;
        let text = std::str::from_utf8(text).map_err(|_| corrupt("manifest is not UTF-8"))?;
        pos += len;
        let mut manifest: toml::Table = toml::from_str(text).map_err(|e| corrupt(format!("manifest: {e}")))?;
        let index = manifest.remove("blobs").ok_or_else(|| corrupt("manifest lacks a blob index"))?;
        let index: Vec<BlobEntry> = index.try_into().map_err(|e| corrupt(format!("blob index: {e}")))?;
        let mut blobs = Vec::with_capacity(index.len());
        for entry in index {
            let len_bytes = bytes.get(pos..pos + 8).ok_or_else(|| corrupt("truncated blob length"))?;
            let n = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
            pos += 8;
            if n as u64 != entry.bytes {
                return Err(corrupt(format!("blob {} length {n}, index says {}", entry.name, entry.bytes)));
            }
            let data = bytes.get(pos..pos + n).ok_or_else(|| corrupt(format!("truncated blob {}", entry.name)))?;
            pos += n;
            if sha(data) != entry.sha256 {
                return Err(corrupt(format!("checksum mismatch in blob {}", entry.name)));
            }
            blobs.push(Blob {
                name: entry.name,
                bytes: data.to_vec(),
            });
        }
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes after last blob"));
        }
        Ok(Self { kind, manifest, blobs })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, kind: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let a = Self::from_bytes(&bytes)?;
        if a.kind != kind {
            return Err(corrupt(format!("{} holds a {} archive, expected {kind}", path.display(), a.kind)));
        }
        Ok(a)
    }

    /// Typed view of the manifest.
    pub fn manifest_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        toml::Value::Table(self.manifest.clone())
            .try_into()
            .map_err(|e| corrupt(format!("manifest: {e}")))
    }
}

/// Serializes `value` into a manifest table.
pub fn manifest_of<T: Serialize>(value: &T) -> Result<toml::Table> {
    match toml::Value::try_from(value).map_err(|e| corrupt(format!("manifest: {e}")))? {
        toml::Value::Table(t) => Ok(t),
        _ => Err(corrupt("manifest must be a table")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn encode_array(dtype: Dtype, shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    if shape.iter().product::<usize>() != data.len() || shape.len() > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!("{} values for shape {shape:?}", data.len())));
    }
    let mut out = vec![dtype.width() as u8, shape.len() as u8];
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.reserve(data.len() * dtype.width());
    for &v in data {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

pub fn decode_array(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let [width, rank, ..] = *bytes else {
        return Err(corrupt("array blob too short"));
    };
    let dtype = match width {
        4 => Dtype::F32,
        8 => Dtype::F64,
        w => return Err(corrupt(format!("unknown array dtype width {w}"))),
    };
    let rank = rank as usize;
    let body = 2 + 4 * rank;
    if bytes.len() < body {
        return Err(corrupt("array header truncated"));
    }
    let shape: Vec<usize> = bytes[2..body]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let n: usize = shape.iter().product();
    if bytes.len() != body + n * dtype.width() {
        return Err(corrupt(format!("array of shape {shape:?} has {} data bytes", bytes.len() - body)));
    }
    let data = match dtype {
        Dtype::F32 => bytes[body..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => bytes[body..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    Ok((shape, data))
}

/// Decodes an array and checks its shape.
pub fn decode_shaped(bytes: &[u8], expected: &[usize]) -> Result<Vec<f64>> {
    let (shape, data) = decode_array(bytes)?;
    if shape != expected {
        return Err(corrupt(format!("array shape {shape:?}, expected {expected:?}")));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Archive {
        let mut t = toml::Table::new();
        t.insert("answer".into(), toml::Value::Integer(42));
        let mut a = Archive::new("test", t);
        a.push("x", encode_array(Dtype::F32, &[2, 3], &[0.5, 1.0, -2.0, 3.25, 0.0, 1e-3]).unwrap());
        a.push("y", encode_array(Dtype::F64, &[1], &[std::f64::consts::PI]).unwrap());
        a
    }

    #[test]
    fn round_trip() {
        let a = sample();
        let bytes = a.to_bytes().unwrap();
        assert!(bytes.starts_with(b"FSRIR-ARCHIVE 1 test\n"));
        let b = Archive::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        let (shape, v) = decode_array(b.blob("x").unwrap()).unwrap();
        assert_eq!(shape, vec![2, 3]);
        assert_eq!(v[3], 3.25);
        assert_eq!(decode_shaped(b.blob("y").unwrap(), &[1]).unwrap(), vec![std::f64::consts::PI]);
        assert!(decode_shaped(b.blob("x").unwrap(), &[3, 2]).is_err());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(Archive::from_bytes(&flipped).is_err());
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Archive::from_bytes(b"hello\n").is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[14] = b'9';
        assert!(Archive::from_bytes(&wrong_version).is_err());
    }
}
