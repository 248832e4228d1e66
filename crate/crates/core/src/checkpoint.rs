//! Versioned binary container shared by field and training checkpoints.
//!
//! Layout: 8-byte magic `SDFRCKPT`, `u32` format version, `u64` header length,
//! a JSON header (kind, metadata, blob directory), then the raw blobs in
//! directory order. Floats are stored as little-endian bit patterns so reloads
//! are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"SDFRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    dtype: String,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Map<String, serde_json::Value>,
    blobs: Vec<BlobEntry>,
}

#[derive(Clone, Debug)]
pub struct Container {
    header: Header,
    data: Vec<Vec<u8>>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Container {
            header: Header {
                kind: kind.to_string(),
                meta: Default::default(),
                blobs: Vec::new(),
            },
            data: Vec::new(),
        }
    }

    pub fn kind(&self) -> &str {
        &self.header.kind
    }

    pub fn set_meta<V: Serialize>(&mut self, key: &str, value: &V) {
        let v = serde_json::to_value(value).expect("metadata serializes");
        self.header.meta.insert(key.to_string(), v);
    }

    pub fn meta<V: DeserializeOwned>(&self, key: &str) -> Result<V> {
        let v = self
            .header
            .meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::Checkpoint(format!("bad metadata `{key}`: {e}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.header.blobs.iter().any(|b| b.name == name)
    }

    fn put(&mut self, name: &str, dtype: &str, len: usize, bytes: Vec<u8>) {
        if let Some(i) = self.header.blobs.iter().position(|b| b.name == name) {
            self.header.blobs.remove(i);
            self.data.remove(i);
        }
        self.header.blobs.push(BlobEntry {
            name: name.to_string(),
            dtype: dtype.to_string(),
            len,
        });
        self.data.push(bytes);
    }

    fn get(&self, name: &str) -> Result<(&BlobEntry, &[u8])> {
        let i = self
            .header
            .blobs
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing blob `{name}`")))?;
        Ok((&self.header.blobs[i], &self.data[i]))
    }

    pub fn put_floats<T: Real>(&mut self, name: &str, values: &[T]) {
        let width = std::mem::size_of::<T>();
        let mut bytes = Vec::with_capacity(std::mem::size_of_val(values));
        for v in values {
            bytes.extend_from_slice(&v.to_bits_u64().to_le_bytes()[..width]);
        }
        self.put(name, T::DTYPE, values.len(), bytes);
    }

    pub fn floats<T: Real>(&self, name: &str) -> Result<Vec<T>> {
        let (entry, bytes) = self.get(name)?;
        if entry.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "blob `{name}` holds {}, requested {}",
                entry.dtype,
                T::DTYPE
            )));
        }
        let width = std::mem::size_of::<T>();
        Ok(bytes
            .chunks_exact(width)
            .map(|c| {
                let mut buf = [0u8; 8];
                buf[..width].copy_from_slice(c);
                T::from_bits_u64(u64::from_le_bytes(buf))
            })
            .collect())
    }

    pub fn put_bytes(&mut self, name: &str, values: &[u8]) {
        self.put(name, "u8", values.len(), values.to_vec());
    }

    pub fn bytes(&self, name: &str) -> Result<Vec<u8>> {
        Ok(self.get(name)?.1.to_vec())
    }
}

pub fn write(path: &Path, c: &Container) -> Result<()> {
    let header = serde_json::to_vec(&c.header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for blob in &c.data {
        out.extend_from_slice(blob);
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    // Write then rename so a crash never leaves a truncated checkpoint.
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Container> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if raw.len() < 20 || &raw[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(raw[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(raw[12..20].try_into().expect("8 bytes")) as usize;
    let body = raw.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
    let mut cursor = 20 + hlen;
    let mut data = Vec::with_capacity(header.blobs.len());
    for b in &header.blobs {
        let width = match b.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            "u8" => 1,
            other => return Err(bad(&format!("unknown dtype {other}"))),
        };
        let end = cursor + b.len * width;
        let bytes = raw.get(cursor..end).ok_or_else(|| bad("truncated blob"))?;
        data.push(bytes.to_vec());
        cursor = end;
    }
    Ok(Container { header, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_and_bytes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let mut c = Container::new("test");
        c.set_meta("step", &42u64);
        c.put_floats("a", &[1.5f32, -0.0, f32::MIN_POSITIVE, 3.0e-41]);
        c.put_floats("b", &[std::f64::consts::PI]);
        c.put_bytes("m", &[0, 1, 2]);
        write(&p, &c).unwrap();
        let r = read(&p).unwrap();
        assert_eq!(r.kind(), "test");
        assert_eq!(r.meta::<u64>("step").unwrap(), 42);
        let a = r.floats::<f32>("a").unwrap();
        assert_eq!(a[1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(a[3].to_bits(), 3.0e-41f32.to_bits());
        assert_eq!(r.floats::<f64>("b").unwrap(), vec![std::f64::consts::PI]);
        assert!(r.floats::<f64>("a").is_err());
        assert_eq!(r.bytes("m").unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        std::fs::write(&p, b"definitely not a checkpoint").unwrap();
        assert!(matches!(read(&p), Err(Error::Checkpoint(_))));
    }
}
