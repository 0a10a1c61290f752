//! The FCK checkpoint encoding.
//!
//! ```text
//! "FCK1"  u32 version=1  u32 tensor_count
//! per tensor (sorted by name):
//!     u16 name_len, name (UTF-8), u8 dtype (0=f32, 1=f64), u8 rank,
//!     rank x u64 dims, row-major element bytes
//! u32 meta_count
//! per entry: u16 key_len, key, u32 val_len, val
//! ```
//!
//! Everything is little-endian with no padding.

use alloc::string::String;
use alloc::vec::Vec;

use crate::checkpoint::{Checkpoint, DType, Tensor};
use crate::error::{bail, Error, Result};

pub const MAGIC: &[u8; 4] = b"FCK1";
pub const VERSION: u32 = 1;

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + ckpt.num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&len_u32(ckpt.len(), "tensor count")?.to_le_bytes());
    for (name, t) in ckpt.tensors() {
        put_str16(&mut out, name)?;
        out.push(t.dtype().code());
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| Error::Format(alloc::format!("`{}` has rank above 255", name)))?;
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match t.dtype() {
            DType::F32 => t
                .data()
                .iter()
                .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            DType::F64 => t
                .data()
                .iter()
                .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out.extend_from_slice(&len_u32(ckpt.meta().len(), "meta count")?.to_le_bytes());
    for (k, v) in ckpt.meta() {
        put_str16(&mut out, k)?;
        out.extend_from_slice(&len_u32(v.len(), "meta value")?.to_le_bytes());
        out.extend_from_slice(v.as_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        bail!(Format, "bad magic");
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!(Format, "unsupported version {}", version);
    }
    let count = r.u32()?;
    let mut ckpt = Checkpoint::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = r.utf8(len)?;
        let dtype = DType::from_code(r.u8()?)
            .ok_or_else(|| Error::Format(alloc::format!("`{}` has an unknown dtype", name)))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?)
                .map_err(|_| Error::Format(alloc::format!("`{}` dimension too large", name)))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::Format(alloc::format!("`{}` is too large", name)))?;
            shape.push(d);
        }
        let nbytes = numel
            .checked_mul(dtype.size_bytes())
            .ok_or_else(|| Error::Format(alloc::format!("`{}` is too large", name)))?;
        let raw = r.take(nbytes)?;
        let data: Vec<f64> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        let tensor = Tensor::new(dtype, shape, data)
            .map_err(|e| Error::Format(alloc::format!("`{}`: {}", name, e)))?;
        if ckpt.get(&name).is_some() {
            bail!(Format, "duplicate tensor name `{}`", name);
        }
        ckpt.insert(name, tensor)
            .map_err(|e| Error::Format(alloc::format!("{}", e)))?;
    }
    let meta_count = r.u32()?;
    for _ in 0..meta_count {
        let klen = r.u16()? as usize;
        let key = r.utf8(klen)?;
        let vlen = r.u32()? as usize;
        let val = r.utf8(vlen)?;
        if ckpt.meta().contains_key(&key) {
            bail!(Format, "duplicate meta key `{}`", key);
        }
        ckpt.set_meta(key, val);
    }
    if r.pos != bytes.len() {
        bail!(Format, "{} trailing bytes", bytes.len() - r.pos);
    }
    Ok(ckpt)
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(alloc::format!("{} does not fit in u32", what)))
}

fn put_str16(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::Format(alloc::format!("string of {} bytes is too long", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
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
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(alloc::format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize) -> Result<String> {
        let raw = self.take(n)?;
        core::str::from_utf8(raw)
            .map(String::from)
            .map_err(|_| Error::Format("invalid UTF-8".into()))
    }
}
