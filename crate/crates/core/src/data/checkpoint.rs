//! Named-tensor container.
//!
//! Layout (little-endian): magic `HRMS`, version `u32` (1), tensor count
//! `u32`, then per tensor: name length `u16`, UTF-8 name, rank `u8`, each
//! extent `u32`, dtype tag `u8` (0 = 32-bit float), raw payload.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use hrmedseg_tensor::Tensor;

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"HRMS";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Serializes named tensors. Values are written as 32-bit floats.
pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Format("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.ndim()).map_err(|_| Error::Format(format!("rank of {name} exceeds 255")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent of {name} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(DTYPE_F32);
        for v in t.to_f32_vec() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("truncated while reading {what} at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a container. Fails without returning partial state.
pub fn decode_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format("name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("duplicate tensor name `{name}`")));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::Format(format!("extents of `{name}` overflow: {shape:?}")))?;
        let tag = r.u8("dtype")?;
        if tag != DTYPE_F32 {
            return Err(Error::Format(format!("unknown dtype tag {tag} for `{name}`")));
        }
        let payload = r.take(numel * 4, "payload")?;
        let data: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::from_f32(&shape, &data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(out)
}

pub fn write_tensors<'a>(path: impl AsRef<Path>, tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    fs::write(path, encode_tensors(tensors)?)?;
    Ok(())
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    decode_tensors(&fs::read(path)?)
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    write_tensors(path, store.iter())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (name, t) in read_tensors(path)? {
        store.insert(name, t)?;
    }
    Ok(store)
}

/// Reads per-image teacher features (one tensor per image id) and checks
/// each against the expected `[channels, h, w]` feature shape.
pub fn load_teacher_features(path: impl AsRef<Path>, expected: &[usize]) -> Result<Vec<(String, Tensor)>> {
    let tensors = read_tensors(path)?;
    for (id, t) in &tensors {
        if t.shape() != expected {
            return Err(Error::Shape {
                what: format!("teacher features `{id}` vs neck output"),
                expected: expected.to_vec(),
                found: t.shape().to_vec(),
            });
        }
    }
    Ok(tensors)
}
