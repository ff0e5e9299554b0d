//! SCST tensor files.
//!
//! Layout, all multi-byte fields little-endian:
//!
//! | bytes        | field                         |
//! |--------------|-------------------------------|
//! | 4            | magic `b"SCST"`               |
//! | 2            | version, `u16` = 1            |
//! | 1            | dtype, 0 = f32, 1 = f64       |
//! | 1            | ndim                          |
//! | 8 × ndim     | dims, `u64` each              |
//! | rest         | row-major payload             |

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::numerics::tensor::checked_numel;
use crate::numerics::{Dtype, Real, Tensor};

pub const MAGIC: [u8; 4] = *b"SCST";
pub const VERSION: u16 = 1;
const FIXED_HEADER: usize = 8;

pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIXED_HEADER + 8 * t.ndim() + T::DTYPE.size() * t.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(u8::try_from(t.ndim()).expect("tensor rank above 255"));
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Parses the header and returns `(dtype, dims, payload offset)`.
pub fn decode_header(bytes: &[u8]) -> Result<(Dtype, Vec<usize>, usize), FormatError> {
    if bytes.len() < FIXED_HEADER {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(FormatError::TruncatedHeader(bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(bytes[6]).ok_or(FormatError::UnknownDtype(bytes[6]))?;
    let ndim = bytes[7] as usize;
    let header_len = FIXED_HEADER + 8 * ndim;
    if bytes.len() < header_len {
        return Err(FormatError::TruncatedHeader(bytes.len()));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let at = FIXED_HEADER + 8 * i;
        let d = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        if d == 0 {
            return Err(FormatError::ZeroDim { index: i });
        }
        dims.push(usize::try_from(d).map_err(|_| FormatError::DimOverflow)?);
    }
    Ok((dtype, dims, header_len))
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Tensor<T>, FormatError> {
    let (dtype, dims, offset) = decode_header(bytes)?;
    if dtype != T::DTYPE {
        return Err(FormatError::DtypeMismatch { expected: T::DTYPE.name(), found: dtype.name() });
    }
    let numel = checked_numel(&dims).ok_or(FormatError::DimOverflow)?;
    let expected = numel.checked_mul(dtype.size()).ok_or(FormatError::DimOverflow)?;
    let payload = &bytes[offset..];
    if payload.len() < expected {
        return Err(FormatError::TruncatedPayload { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(FormatError::TrailingBytes(payload.len() - expected));
    }
    let data = payload.chunks_exact(dtype.size()).map(T::read_le).collect();
    Ok(Tensor::new(dims, data).expect("validated above"))
}

pub fn tensor_write<T: Real>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn tensor_read<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

/// Reads either dtype and widens to `f64`.
pub fn tensor_read_any(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dtype, _, _) = decode_header(&bytes)?;
    Ok(match dtype {
        Dtype::F32 => decode::<f32>(&bytes)?.cast(),
        Dtype::F64 => decode::<f64>(&bytes)?,
    })
}
