//! Dense tensor container used to hand feature and saliency maps to the CLI.
//!
//! Layout (little-endian):
//!
//! ```text
//! "FLKT0001"            8-byte magic
//! rank: u32
//! dims: rank x u32
//! dtype: u8             0 = f64, 1 = f32
//! payload               product(dims) samples, row-major
//! ```

use thiserror::Error;

use crate::loss::FeatureMap;
use crate::similarity::SaliencyMap;

pub const TENSOR_MAGIC: &[u8; 8] = b"FLKT0001";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorFileError {
    #[error("bad tensor magic at byte offset 0")]
    BadMagic,
    #[error("tensor file truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },
    #[error("tensor payload is {found} bytes, dims require {expected}")]
    PayloadLength { expected: u64, found: u64 },
    #[error("unknown dtype code {0} at byte offset {1}")]
    UnknownDtype(u8, u64),
    #[error("expected a tensor of shape {expected}, got dims {found:?}")]
    Shape { expected: String, found: Vec<usize> },
    #[error("non-finite sample at element {0}")]
    NonFinite(usize),
    #[error("invalid tensor: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub enum TensorData {
    F64(Vec<f64>),
    F32(Vec<f32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn code(&self) -> u8 {
        match self {
            TensorData::F64(_) => 0,
            TensorData::F32(_) => 1,
        }
    }

    /// Samples widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F64(v) => v.clone(),
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

/// Bitwise equality, so NaN payloads compare equal to themselves.
impl PartialEq for TensorData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    dims: Vec<usize>,
    data: TensorData,
}

impl TensorFile {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self, TensorFileError> {
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(TensorFileError::Invalid("dimension exceeds u32".into()));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(TensorFileError::Invalid(format!(
                "{} samples do not fill dims {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn encode(&self) -> Vec<u8> {
        let sample = match self.data {
            TensorData::F64(_) => 8,
            TensorData::F32(_) => 4,
        };
        let mut out = Vec::with_capacity(13 + 4 * self.dims.len() + sample * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(self.data.code());
        match &self.data {
            TensorData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorFileError> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(TensorFileError::Truncated {
                    needed: n as u64,
                    found: bytes.len() as u64,
                })
            } else {
                Ok(())
            }
        };
        need(8)?;
        if &bytes[..8] != TENSOR_MAGIC {
            return Err(TensorFileError::BadMagic);
        }
        need(12)?;
        let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = rank
            .checked_mul(4)
            .and_then(|d| d.checked_add(13))
            .ok_or_else(|| TensorFileError::Invalid(format!("rank {rank} is too large")))?;
        need(header)?;
        let dims: Vec<usize> = bytes[12..12 + 4 * rank]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let code = bytes[header - 1];
        let size = match code {
            0 => 8u64,
            1 => 4u64,
            other => return Err(TensorFileError::UnknownDtype(other, header as u64 - 1)),
        };
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| TensorFileError::Invalid("element count overflows".into()))?;
        let payload = &bytes[header..];
        let expected = count
            .checked_mul(size)
            .ok_or_else(|| TensorFileError::Invalid("payload size overflows".into()))?;
        if payload.len() as u64 != expected {
            return Err(TensorFileError::PayloadLength {
                expected,
                found: payload.len() as u64,
            });
        }
        let data = match code {
            0 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }

    pub fn from_feature_map(f: &FeatureMap) -> Self {
        let (c, h, w) = f.shape();
        Self {
            dims: vec![c, h, w],
            data: TensorData::F64(f.values().to_vec()),
        }
    }

    pub fn from_saliency(s: &SaliencyMap) -> Self {
        Self {
            dims: vec![s.height(), s.width()],
            data: TensorData::F64(s.values().to_vec()),
        }
    }

    fn finite_values(&self) -> Result<Vec<f64>, TensorFileError> {
        let values = self.data.to_f64();
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(TensorFileError::NonFinite(i));
        }
        Ok(values)
    }

    /// Interprets a rank-3 `C x H x W` tensor as a feature map.
    pub fn to_feature_map(&self) -> Result<FeatureMap, TensorFileError> {
        let [c, h, w] = self.dims[..] else {
            return Err(TensorFileError::Shape {
                expected: "C x H x W".into(),
                found: self.dims.clone(),
            });
        };
        FeatureMap::new(c, h, w, self.finite_values()?)
            .map_err(|e| TensorFileError::Invalid(e.to_string()))
    }

    /// Interprets an `H x W` (or `1 x H x W`) tensor as a saliency map.
    pub fn to_saliency(&self) -> Result<SaliencyMap, TensorFileError> {
        let (h, w) = match self.dims[..] {
            [h, w] | [1, h, w] => (h, w),
            _ => {
                return Err(TensorFileError::Shape {
                    expected: "H x W".into(),
                    found: self.dims.clone(),
                })
            }
        };
        SaliencyMap::new(h, w, self.finite_values()?)
            .map_err(|e| TensorFileError::Invalid(e.to_string()))
    }
}
