//! Portable parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "CNETCKPT"
//! version u32      1
//! count   u32      number of tensors
//! table   count × { name_len u32, name utf-8, dtype u8 (0 = f32, 1 = f64),
//!                   ndim u32, dims ndim × u64 }
//! payload tensors in table order, row-major, element width from dtype
//! ```

use std::path::Path;

use super::{Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CNETCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

pub type Checkpoint<T> = Vec<NamedTensor<T>>;

fn dtype_code(name: &str) -> u8 {
    match name {
        "f32" => 0,
        _ => 1,
    }
}

pub fn encode<T: Real>(tensors: &[NamedTensor<T>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for nt in tensors {
        out.extend_from_slice(&(nt.name.len() as u32).to_le_bytes());
        out.extend_from_slice(nt.name.as_bytes());
        out.push(dtype_code(T::DTYPE));
        out.extend_from_slice(&(nt.tensor.shape.len() as u32).to_le_bytes());
        for &d in &nt.tensor.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for nt in tensors {
        for &v in &nt.tensor.data {
            v.to_le(&mut out);
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Decodes a checkpoint; values stored in either precision are converted to `T`.
pub fn decode<T: Real>(buf: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        let dtype = r.take(1)?[0];
        if dtype > 1 {
            return Err(Error::Checkpoint(format!("unknown dtype code {dtype}")));
        }
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        table.push((name, dtype, shape));
    }
    let mut out = Vec::with_capacity(table.len());
    for (name, dtype, shape) in table {
        let n: usize = shape.iter().product();
        let data: Vec<T> = if dtype == 0 {
            r.take(n * 4)?
                .chunks_exact(4)
                .map(|b| {
                    T::of(f64::from(f32::from_le_bytes(
                        b.try_into().expect("4 bytes"),
                    )))
                })
                .collect()
        } else {
            r.take(n * 8)?
                .chunks_exact(8)
                .map(|b| T::of(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                .collect()
        };
        out.push(NamedTensor {
            name,
            tensor: Tensor::new(&shape, data)?,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save_checkpoint<T: Real>(path: &Path, tensors: &[NamedTensor<T>]) -> Result<()> {
    std::fs::write(path, encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
