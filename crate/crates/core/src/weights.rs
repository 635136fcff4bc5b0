//! Binary weight checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "E3GW"  magic
//! u32     version (currently 1)
//! u32     tensor count
//! per tensor:
//!   u16       name length, then that many bytes of UTF-8 name
//!   u8        rank (1..=4)
//!   u32×rank  extents
//!   f32×prod  payload, row-major
//! ```
//!
//! Writing iterates parameters in sorted-name order and preserves f32 bit
//! patterns, so save → load → save reproduces the file byte for byte.

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::{Tensor, MAX_RANK};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"E3GW";
const VERSION: u32 = 1;

pub fn encode_weights(params: &ParamSet<f32>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let nb = name.as_bytes();
        assert!(nb.len() <= u16::MAX as usize, "parameter name too long");
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(t.rank() as u8);
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_weights(bytes: &[u8]) -> Result<ParamSet<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::WeightFormat(format!(
            "bad magic {:?} (want {:?})",
            &magic[..4.min(magic.len())],
            MAGIC
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::WeightFormat(format!(
            "unsupported version {version} (want {VERSION})"
        )));
    }
    let count = r.u32()? as usize;
    let mut params = ParamSet::new();
    for i in 0..count {
        let name_len = r.u16()? as usize;
        let name_bytes = r.take(name_len)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::WeightFormat(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        if params.contains(&name) {
            return Err(Error::WeightFormat(format!(
                "duplicate tensor name {name:?}"
            )));
        }
        let rank = r.u8()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::WeightFormat(format!(
                "tensor {name:?}: rank {rank} outside 1..=4"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let e = r.u32()? as usize;
            if e == 0 {
                return Err(Error::WeightFormat(format!("tensor {name:?}: zero extent")));
            }
            shape.push(e);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(name, Tensor::new(&shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::WeightFormat(format!(
            "{} trailing bytes after {count} tensors",
            bytes.len() - r.pos
        )));
    }
    Ok(params)
}

pub fn save_weights(path: impl AsRef<Path>, params: &ParamSet<f32>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_weights(params))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ParamSet<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_weights(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::WeightFormat(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
