//! Binary tensor container.
//!
//! Layout, all little-endian:
//!
//! | bytes        | content                          |
//! |--------------|----------------------------------|
//! | 4            | magic `CFT1` (`43 46 54 31`)     |
//! | 1            | ndim, 1..=8                      |
//! | 4 × ndim     | u32 extents                      |
//! | 4 × product  | IEEE-754 f32 payload, row-major  |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"CFT1";
pub const MAX_NDIM: usize = 8;

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let ndim = t.ndim();
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::Format(format!(
            "tensors need 1 to {MAX_NDIM} axes, got {ndim}"
        )));
    }
    let mut out = Vec::with_capacity(5 + 4 * ndim + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    out.push(ndim as u8);
    for &d in t.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("extent {d} does not fit in 32 bits")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 5 {
        return Err(Error::Format(format!(
            "header truncated: {} bytes, need at least 5",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected {:02x?}",
            &bytes[..4],
            MAGIC
        )));
    }
    let ndim = usize::from(bytes[4]);
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::Format(format!("ndim {ndim} outside 1..={MAX_NDIM}")));
    }
    let header = 5 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Format(format!(
            "dimension table truncated: expected {header} header bytes, got {}",
            bytes.len()
        )));
    }
    let shape: Vec<usize> = bytes[5..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let expected = count
        .checked_mul(4)
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload size mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}
