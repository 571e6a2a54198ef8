//! Tensor files: a 16-byte header of four little-endian `u32` (n, c, h, w)
//! followed by `n·c·h·w` little-endian `f32` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Shape4;
use crate::Tensor;

const HEADER_LEN: usize = 16;

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    for d in t.shape().dims() {
        let d = u32::try_from(d)
            .map_err(|_| Error::TensorFile(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::TensorFile(format!(
            "file is {} bytes, shorter than the 16-byte header",
            bytes.len()
        )));
    }
    let (header, payload) = bytes.split_at(HEADER_LEN);
    let dim = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let shape = Shape4::new(dim(0), dim(1), dim(2), dim(3));
    let expected = shape
        .checked_len()
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::TensorFile(format!("shape {shape} is too large")))?;
    if payload.len() != expected {
        return Err(Error::TensorFile(format!(
            "shape {shape} needs {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(shape, data)?)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode_tensor(t)?).map_err(|e| Error::file(path, e))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
}
