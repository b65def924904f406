//! Binary tensor files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `MX4T` |
//! | 2 | version (currently 1) |
//! | 1 | dtype: 0 = FP32, 1 = FP64, 2 = MXFP4 |
//! | 1 | ndim |
//! | 8 × ndim | dims |
//! | rest | payload |
//!
//! MXFP4 payloads are 17-byte blocks (scale exponent, then 16 bytes of codes
//! with the low nibble first), grouped along the last dimension.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mx::{MxMatrix, MX_BLOCK, PACKED_BLOCK_BYTES};

pub const MAGIC: &[u8; 4] = b"MX4T";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    Mxfp4 = 2,
}

impl DType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::Mxfp4),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    /// Blocks along the last dimension, flattened over the leading ones.
    Mxfp4(MxMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::TensorFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn element_count(dims: &[u64]) -> Option<usize> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .and_then(|n| usize::try_from(n).ok())
}

impl TensorFile {
    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::Mxfp4(_) => DType::Mxfp4,
        }
    }

    pub fn f64(dims: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        Self::checked(dims, TensorData::F64(values))
    }

    pub fn f32(dims: Vec<u64>, values: Vec<f32>) -> Result<Self> {
        Self::checked(dims, TensorData::F32(values))
    }

    pub fn mxfp4(dims: Vec<u64>, m: MxMatrix) -> Result<Self> {
        Self::checked(dims, TensorData::Mxfp4(m))
    }

    fn checked(dims: Vec<u64>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::shape(format!(
                "{} dimensions exceed the format limit",
                dims.len()
            )));
        }
        let n = element_count(&dims).ok_or_else(|| Error::shape("tensor too large"))?;
        let ok = match &data {
            TensorData::F32(v) => v.len() == n,
            TensorData::F64(v) => v.len() == n,
            TensorData::Mxfp4(m) => {
                let (rows, cols) = Self::matrix_shape_of(&dims)?;
                m.rows() == rows && m.cols() == cols
            }
        };
        if !ok {
            return Err(Error::shape(format!("payload does not match dims {dims:?}")));
        }
        Ok(Self { dims, data })
    }

    /// Rows and columns when the leading dimensions are flattened; a scalar or
    /// vector is one row.
    pub fn matrix_shape(&self) -> Result<(usize, usize)> {
        Self::matrix_shape_of(&self.dims)
    }

    fn matrix_shape_of(dims: &[u64]) -> Result<(usize, usize)> {
        let cols = dims.last().copied().unwrap_or(1);
        let rows = element_count(&dims[..dims.len().saturating_sub(1)]);
        match (rows, usize::try_from(cols)) {
            (Some(r), Ok(c)) => Ok((r, c)),
            _ => Err(Error::shape("tensor too large")),
        }
    }

    /// Values as an `f64` matrix (leading dimensions flattened). MXFP4
    /// payloads are dequantized.
    pub fn to_matrix(&self) -> Result<Matrix> {
        let (rows, cols) = self.matrix_shape()?;
        match &self.data {
            TensorData::F32(v) => Matrix::from_vec(rows, cols, v.iter().map(|&x| x as f64).collect()),
            TensorData::F64(v) => Matrix::from_vec(rows, cols, v.clone()),
            TensorData::Mxfp4(m) => Ok(m.dequantize()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype() as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Mxfp4(m) => out.extend_from_slice(&m.to_packed_bytes()),
        }
        out
    }

    /// Parses a complete file image. `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(bad(path, "truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad(path, "bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(path, format!("unsupported version {version}")));
        }
        let dtype = DType::from_code(bytes[6]).ok_or_else(|| bad(path, format!("unknown dtype code {}", bytes[6])))?;
        let ndim = bytes[7] as usize;
        let header = 8 + 8 * ndim;
        if bytes.len() < header {
            return Err(bad(path, "truncated dims"));
        }
        let dims: Vec<u64> = bytes[8..header]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let payload = &bytes[header..];
        let n = element_count(&dims).ok_or_else(|| bad(path, "dims overflow"))?;
        let expect = |len: Option<usize>| -> Result<()> {
            match len {
                Some(l) if l == payload.len() => Ok(()),
                Some(l) => Err(bad(path, format!("payload is {} bytes, dims need {l}", payload.len()))),
                None => Err(bad(path, "dims overflow")),
            }
        };
        let data = match dtype {
            DType::F32 => {
                expect(n.checked_mul(4))?;
                TensorData::F32(
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                        .collect(),
                )
            }
            DType::F64 => {
                expect(n.checked_mul(8))?;
                TensorData::F64(
                    payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect(),
                )
            }
            DType::Mxfp4 => {
                let (rows, cols) = Self::matrix_shape_of(&dims).map_err(|e| bad(path, e.to_string()))?;
                if cols % MX_BLOCK != 0 {
                    return Err(bad(
                        path,
                        format!("last dimension {cols} is not a multiple of {MX_BLOCK}"),
                    ));
                }
                expect((n / MX_BLOCK).checked_mul(PACKED_BLOCK_BYTES))?;
                TensorData::Mxfp4(
                    MxMatrix::from_packed_bytes(rows, cols, payload).map_err(|e| bad(path, e.to_string()))?,
                )
            }
        };
        Ok(Self { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| bad(path, e.to_string()))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| bad(path, e.to_string()))
    }
}
