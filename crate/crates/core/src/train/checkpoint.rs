//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `QGAL`, version `u32`, tensor count `u32`,
//! then per tensor: name (`u16` length + UTF-8), dtype `u8` (0 = f32,
//! 1 = int8-quantized, 2 = int4-quantized), rank `u8`, dims as `u32`s,
//! block size `u32`, payload bytes, scales (`f32` array), zeros (`f32`
//! array). A CRC32 of everything before it closes the file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::quant::{ParamStore, QuantSpec, QuantizedTensor, Rounding};

pub const MAGIC: &[u8; 4] = b"QGAL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub store: ParamStore<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, store: ParamStore<f32>) -> Self {
        Self { name: name.into(), store }
    }

    pub fn dtype_code(&self) -> u8 {
        match &self.store {
            ParamStore::Dense(_) => 0,
            ParamStore::Quantized(q) if q.spec().bits() == 8 => 1,
            ParamStore::Quantized(_) => 2,
        }
    }
}

/// Packs `u64`s into an f32 tensor of exact 16-bit limbs.
pub fn words_to_tensor(name: &str, words: &[u64]) -> NamedTensor {
    let limbs: Vec<f32> = words
        .iter()
        .flat_map(|w| (0..4).map(move |i| ((w >> (16 * i)) & 0xffff) as f32))
        .collect();
    let n = limbs.len();
    NamedTensor::new(name, ParamStore::Dense(Matrix::from_vec(1, n, limbs).expect("length matches")))
}

pub fn tensor_to_words(t: &NamedTensor) -> Result<Vec<u64>> {
    let ParamStore::Dense(m) = &t.store else {
        return Err(Error::Checkpoint(format!("'{}' is not a metadata tensor", t.name)));
    };
    if m.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!("'{}' has a partial word", t.name)));
    }
    m.as_slice()
        .chunks(4)
        .map(|limbs| {
            limbs.iter().enumerate().try_fold(0u64, |acc, (i, &l)| {
                if l < 0.0 || l > 65535.0 || l.fract() != 0.0 {
                    return Err(Error::Checkpoint(format!("'{}' holds a non-limb value {l}", t.name)));
                }
                Ok(acc | ((l as u64) << (16 * i)))
            })
        })
        .collect()
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(tensors.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?.to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {}", t.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.dtype_code());
        let (rows, cols) = t.store.shape();
        out.push(2);
        for d in [rows, cols] {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| Error::Checkpoint("dimension too large".into()))?.to_le_bytes());
        }
        match &t.store {
            ParamStore::Dense(m) => {
                out.extend_from_slice(&0u32.to_le_bytes());
                for v in m.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            ParamStore::Quantized(q) => {
                out.extend_from_slice(&(q.spec().block_size() as u32).to_le_bytes());
                out.extend_from_slice(q.payload());
                for v in q.scales().iter().chain(q.zeros()) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
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

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    if bytes.len() < 16 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        let rank = r.u8()?;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims[..] {
            [n] => (1, n),
            [rows, cols] => (rows, cols),
            _ => return Err(Error::Checkpoint(format!("'{name}' has unsupported rank {rank}"))),
        };
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint("dimensions overflow".into()))?;
        let block = r.u32()? as usize;
        let store = match dtype {
            0 => ParamStore::Dense(Matrix::from_vec(rows, cols, r.f32s(n)?)?),
            1 | 2 => {
                let spec = QuantSpec::new(if dtype == 1 { 8 } else { 4 }, block, Rounding::NearestTiesToEven)
                    .map_err(|e| Error::Checkpoint(format!("'{name}': {e}")))?;
                let payload = r.take(spec.payload_len(n))?.to_vec();
                let blocks = spec.block_count(n);
                let scales = r.f32s(blocks)?;
                let zeros = r.f32s(blocks)?;
                ParamStore::Quantized(QuantizedTensor::from_parts(rows, cols, spec, payload, scales, zeros)?)
            }
            other => return Err(Error::Checkpoint(format!("'{name}' has unknown dtype {other}"))),
        };
        tensors.push(NamedTensor { name, store });
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(tensors)
}

pub fn save_checkpoint(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let bytes = encode(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::Checkpoint(format!("cannot write {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}
