//! Binary parameter files.
//!
//! Layout: the 8-byte magic `DCNCKPT1`, then records until end of file.
//! Each record is a u32 name length, the UTF-8 name, a dtype code
//! (1 = f32, 2 = f64), a u32 rank, one u64 per extent and the raw values.
//! All integers and values are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DCNCKPT1";

/// A stored tensor of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn cast<T: Real>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Real>(records: &[(String, Tensor<T>)]) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.code());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn values<T: Real>(r: &mut Reader<'_>, shape: Vec<usize>, count: usize) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    let raw = r.take(
        count
            .checked_mul(size)
            .ok_or_else(|| Error::Malformed("tensor too large".into()))?,
        "tensor values",
    )?;
    let data = raw.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(shape, data)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, AnyTensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(len, "name")?.to_vec())
            .map_err(|_| Error::Malformed("record name is not UTF-8".into()))?;
        let code = r.take(1, "dtype")?[0];
        let dtype = DType::from_code(code).ok_or_else(|| Error::Malformed(format!("dtype code {code}")))?;
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(r.u64("extent")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Malformed("tensor too large".into()))?;
        let tensor = match dtype {
            DType::F32 => AnyTensor::F32(values(&mut r, shape, count)?),
            DType::F64 => AnyTensor::F64(values(&mut r, shape, count)?),
        };
        out.push((name, tensor));
    }
    Ok(out)
}

pub fn write_checkpoint<T: Real>(path: &Path, records: &[(String, Tensor<T>)]) -> Result<()> {
    fs::write(path, encode(records))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, AnyTensor)>> {
    decode(&fs::read(path)?)
}

/// Reads a checkpoint converting every record to `T`.
pub fn read_checkpoint_as<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    Ok(read_checkpoint(path)?
        .into_iter()
        .map(|(n, t)| (n, t.cast()))
        .collect())
}
