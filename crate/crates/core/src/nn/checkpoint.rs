//! Binary parameter container.
//!
//! Layout: `b"PCCK"`, format version (u16 LE), then one record per tensor
//! until end of file: name length (u32), UTF-8 name, rank (u32), dims (u32
//! each), values (f32 each). Everything little-endian.

use std::path::Path;

use super::tensor::{NetParams, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCCK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn params_to_bytes(params: &NetParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + params.num_scalars() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Data(format!("checkpoint truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<NetParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Data("not a parameter checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let mut params = NetParams::new();
    while r.pos < bytes.len() {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Data("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Data(format!("tensor `{name}` is too large")))?;
        let raw = r.take(count.checked_mul(4).unwrap_or(usize::MAX), "values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.insert(&name, Tensor::new(shape, values)?)?;
    }
    Ok(params)
}

pub fn save_params(params: &NetParams, path: &Path) -> Result<()> {
    std::fs::write(path, params_to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<NetParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    params_from_bytes(&bytes)
}
