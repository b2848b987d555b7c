//! Named-array archive (`params.bin`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"NAMEDARR"
//! version  u32
//! count    u32
//! count × { name_len u32, name utf-8, dtype u8 (1 = f32), ndim u32, dims u64 × ndim }
//! payloads, in table order, each prod(dims) × f32 little-endian
//! ```

use std::fs;
use std::path::Path;

use super::{ParameterSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NAMEDARR";
pub const ARCHIVE_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

pub fn encode_archive(params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
    }
    for (_, tensor) in params.iter() {
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let bytes = &self.buf[self.pos..end];
        self.pos = end;
        Ok(bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_archive(bytes: &[u8]) -> Result<ParameterSet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != ARCHIVE_VERSION {
        return Err(Error::Version {
            found: version,
            supported: ARCHIVE_VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Format(format!("parameter name is not utf-8: {e}")))?
            .to_owned();
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype tag {dtype} for `{name}`")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut set = ParameterSet::new();
    for (name, shape) in table {
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("shape of `{name}` overflows")))?;
        let data = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        set = set.with(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }
    Ok(set)
}

pub fn write_archive(path: impl AsRef<Path>, params: &ParameterSet) -> Result<()> {
    fs::write(path, encode_archive(params))?;
    Ok(())
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<ParameterSet> {
    decode_archive(&fs::read(path)?)
}
