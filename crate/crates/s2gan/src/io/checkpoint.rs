//! Checkpoint files: a versioned little-endian container of named arrays
//! with a SHA-256 trailer.
//!
//! ```text
//! magic "S2GANCKP" | version u32 | count u32
//! count x { name_len u32 | name | dtype u8 | ndim u32 | dims u64 x ndim | bytes u64 | payload }
//! sha256 of everything above (32 bytes)
//! ```

use std::fs;
use std::path::Path;

use s2gan_core::train::{ArrayData, NamedArray, TrainState};
use s2gan_core::Real;
use sha2::{Digest, Sha256};

use super::write_atomic;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"S2GANCKP";
pub const VERSION: u32 = 1;

fn dtype_code(d: &ArrayData) -> u8 {
    match d {
        ArrayData::F32(_) => 0,
        ArrayData::F64(_) => 1,
        ArrayData::U64(_) => 2,
        ArrayData::U8(_) => 3,
    }
}

pub fn encode(arrays: &[NamedArray]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.push(dtype_code(&a.data));
        out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
        for &d in &a.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let payload: Vec<u8> = match &a.data {
            ArrayData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::U64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::U8(v) => v.clone(),
        };
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated while reading {}", field)),
        }
    }

    fn u32(&mut self, field: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

/// Parse and verify the whole file; nothing is returned unless every array
/// decodes.
pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<NamedArray>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(format!("version {} is not supported (expected {})", version, VERSION));
    }
    let count = r.u32("array count")?;
    let mut arrays = Vec::new();
    for i in 0..count {
        let what = format!("array {}", i);
        let len = r.u32(&format!("{} name length", what))? as usize;
        let name = std::str::from_utf8(r.take(len, &format!("{} name", what))?)
            .map_err(|_| format!("{} name is not UTF-8", what))?
            .to_string();
        let dtype = r.take(1, &format!("{} dtype", name))?[0];
        let ndim = r.u32(&format!("{} rank", name))? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64(&format!("{} shape", name)).map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let nbytes = r.u64(&format!("{} length", name))? as usize;
        let payload = r.take(nbytes, &name)?;
        let width = match dtype {
            0 => 4,
            1 | 2 => 8,
            3 => 1,
            d => return Err(format!("{}: unknown dtype {}", name, d)),
        };
        if nbytes % width != 0 {
            return Err(format!("{}: {} bytes is not a whole number of elements", name, nbytes));
        }
        let data = match dtype {
            0 => ArrayData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            1 => ArrayData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            2 => ArrayData::U64(payload.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
            _ => ArrayData::U8(payload.to_vec()),
        };
        arrays.push(NamedArray::new(name, shape, data));
    }
    let body = r.pos;
    let digest = r.take(32, "checksum")?;
    if digest != Sha256::digest(&bytes[..body]).as_slice() {
        return Err("checksum mismatch".into());
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(arrays)
}

/// Atomic write: temp file, then rename.
pub fn save_checkpoint<T: Real>(path: &Path, state: &TrainState<T>) -> Result<()> {
    write_atomic(path, &encode(&state.snapshot()))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<TrainState<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let arrays = decode(&bytes).map_err(|m| Error::format(path, m))?;
    TrainState::restore(&arrays).map_err(|e| Error::format(path, e.to_string()))
}

/// First 16 hex digits of the file's checksum.
pub fn checkpoint_id(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 32 {
        return Err(Error::format(path, "truncated while reading checksum"));
    }
    Ok(hex::encode(&bytes[bytes.len() - 32..])[..16].to_string())
}
