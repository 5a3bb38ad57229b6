//! Binary tensor snapshots.
//!
//! Layout (little-endian): magic `MOHT`, version `u32`, tensor count `u32`, then
//! per tensor: name length `u32`, UTF-8 name, rank `u32`, extents `u64` each,
//! dtype tag `u8` (0 = f32, 1 = f64), raw elements.

use std::path::Path;

use super::{DType, Element, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MOHT";
pub const VERSION: u32 = 1;

pub fn encode<T: Element>(entries: &[(&str, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(T::DTYPE.tag());
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a snapshot, converting every tensor to `T`.
pub fn decode<T: Element>(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor<T>)>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic (not a MOHT snapshot)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported snapshot version {version}"));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let tag = r.take(1)?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| format!("unknown dtype tag {tag} for {name}"))?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * dtype.size())?;
        let data: Vec<T> = match dtype {
            DType::F32 => raw.chunks(4).map(|c| T::from_f64(f32::read_le(c) as f64)).collect(),
            DType::F64 => raw.chunks(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
        };
        out.push((name, Tensor::from_parts(shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(out)
}

pub fn save<T: Element>(path: &Path, entries: &[(&str, &Tensor<T>)]) -> Result<()> {
    std::fs::write(path, encode(entries)).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load<T: Element>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    decode(&bytes).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}
