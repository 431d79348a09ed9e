//! The RLRT binary tensor format.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "RLRT"
//!      4     1  version (1)
//!      5     1  dtype (1 = little-endian IEEE-754 f32)
//!      6     2  reserved, zero
//!      8    24  height, width, frames as little-endian u64
//!     32   4·n  payload, frame-major then row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

pub const MAGIC: [u8; 4] = *b"RLRT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32_LE: u8 = 1;
pub const HEADER_LEN: usize = 32;

pub fn encode_rlrt(t: &VideoTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32_LE);
    out.extend_from_slice(&[0, 0]);
    for d in [t.height(), t.width(), t.frames()] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_rlrt(bytes: &[u8], path: &Path) -> Result<VideoTensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: bytes[4],
        });
    }
    if bytes[5] != DTYPE_F32_LE {
        return Err(Error::UnsupportedDtype {
            path: path.to_path_buf(),
            found: bytes[5],
        });
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::format(path, "reserved header bytes are not zero"));
    }
    let dim =
        |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
    let (h, w, t) = (dim(0), dim(1), dim(2));
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(t))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::format(
            path,
            format!(
                "{} trailing bytes after payload",
                bytes.len() as u64 - expected
            ),
        ));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    VideoTensor::from_vec(h as usize, w as usize, t as usize, data)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_rlrt(t: &VideoTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_rlrt(t)).map_err(|e| Error::io(path, e))
}

pub fn read_rlrt(path: impl AsRef<Path>) -> Result<VideoTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rlrt(&bytes, path)
}
