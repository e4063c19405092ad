//! Binary tensor checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PBT1"                                magic
//! u32   tensor count
//! per tensor, in sorted name order:
//!   u16   name length in bytes
//!   [u8]  UTF-8 name
//!   u8    rank
//!   u32   dims[rank]
//!   f32   data, row-major
//! ```
//!
//! Round-trips are bit-exact: floats are stored via `to_bits`, so NaN
//! payloads and signed zeros survive unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::Tensor;

pub const MAGIC: &[u8; 4] = b"PBT1";

/// Serialize tensors to `path`. Iteration order of the map (sorted by name)
/// is the on-disk order, so equal maps produce identical bytes.
pub fn write_checkpoint(path: &Path, tensors: &BTreeMap<String, Tensor<f32>>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::Checkpoint("too many tensors".to_string()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        let name_len = u16::try_from(name_bytes.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name:?}")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name_bytes);
        let rank = u8::try_from(tensor.shape.len())
            .map_err(|_| Error::Checkpoint(format!("rank too large for {name:?}")))?;
        buf.push(rank);
        for &dim in &tensor.shape {
            let dim = u32::try_from(dim)
                .map_err(|_| Error::Checkpoint(format!("dimension too large in {name:?}")))?;
            buf.extend_from_slice(&dim.to_le_bytes());
        }
        for &v in &tensor.data {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint written by [`write_checkpoint`]. Trailing bytes,
/// truncation, a bad magic, or an oversized header field all fail.
pub fn read_checkpoint(path: &Path) -> Result<BTreeMap<String, Tensor<f32>>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    let magic = cursor.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            &magic[..4.min(magic.len())],
            MAGIC
        )));
    }
    let count = u32::from_le_bytes(cursor.take(4)?.try_into().unwrap());
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(cursor.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(cursor.take(name_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("invalid tensor name: {e}")))?;
        let rank = cursor.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(cursor.take(4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cursor.take(numel * 4)?;
        let mut data = Vec::with_capacity(numel);
        for chunk in raw.chunks_exact(4) {
            data.push(f32::from_bits(u32::from_le_bytes(chunk.try_into().unwrap())));
        }
        if out.insert(name.clone(), Tensor::new(shape, data)).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor name {name:?}")));
        }
    }
    if cursor.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after {} tensors",
            bytes.len() - cursor.pos,
            count
        )));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
}
