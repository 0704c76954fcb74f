// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        b"GCKP"
//! version      u32   (FORMAT_VERSION)
//! tensor_count u32
//! meta_count   u32
//! meta_count × { key_len u32, key utf8, val_len u32, val utf8 }
//! tensor_count × { name_len u32, name utf8, ndim u32, ndim × u64 dim,
//!                  product(dims) × f64 (little-endian IEEE-754) }
//! ```
//!
//! Values are stored as `f64` regardless of the in-memory scalar, so `f32`
//! and `f64` stores both round-trip exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{GradError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f64>)>,
}

fn bad(msg: impl Into<String>) -> GradError {
    GradError::Checkpoint(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| bad(e.to_string()))
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.push((key.into(), value.into()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Adds every tensor of `store` as `namespace/name`.
    pub fn add_store<S: Scalar>(&mut self, store: &ParamStore<S>) {
        for (name, t) in store.iter() {
            self.tensors
                .push((format!("{}/{}", store.namespace(), name), t.convert()));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites each tensor of `store` from the entry `namespace/name`.
    pub fn restore_store<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        let names: Vec<String> = store.names().to_vec();
        for name in names {
            let key = format!("{}/{}", store.namespace(), name);
            let t = self.get(&key).ok_or_else(|| bad(format!("missing tensor `{key}`")))?;
            let cur = store.get(&name)?;
            if cur.shape() != t.shape() {
                return Err(GradError::Shape {
                    op: "restore",
                    expected: cur.shape().to_vec(),
                    got: t.shape().to_vec(),
                });
            }
            store.insert(name, t.convert());
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        w.write_all(&(self.metadata.len() as u32).to_le_bytes())?;
        for (k, v) in &self.metadata {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        for (name, t) in &self.tensors {
            write_str(w, name)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let count = read_u32(r)? as usize;
        let meta_count = read_u32(r)? as usize;
        let mut metadata = Vec::with_capacity(meta_count);
        for _ in 0..meta_count {
            metadata.push((read_str(r)?, read_str(r)?));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_str(r)?;
            let ndim = read_u32(r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut &bytes[..])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}
