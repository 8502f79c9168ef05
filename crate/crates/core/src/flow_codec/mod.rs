//! Reading and writing optical flow.
//!
//! Two on-disk representations are supported:
//!
//! * the Middlebury `.flo` interchange format ([`read_flo`], [`write_flo`]);
//! * a compact packed representation: each component is quantized to a
//!   signed 16-bit fixed-point value ([`quantize`]), the two components of a
//!   pixel are packed into one 32-bit word ([`pack`]), and the words are
//!   stored as a Deflate-compressed single-image TIFF ([`encode_tiff`]).
//!
//! The TIFF layer never interprets the packed words numerically, so words
//! whose bit pattern happens to be a floating-point NaN survive unchanged.

mod flo;
mod quantize;
mod tiff;

pub use flo::{read_flo, write_flo, FLO_HEADER_LEN, FLO_MAGIC};
pub use quantize::{dequantize, pack, quantize, unpack, PackedImage, QuantizedFlow, DEFAULT_SCALE};
pub use tiff::{decode_tiff, encode_tiff, SCALE_TAG};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic at byte offset 0: expected 202021.25, found {found} (bits {bits:#010x})")]
    BadMagic { found: String, bits: u32 },
    #[error("truncated payload: expected {expected} bytes, found {actual} (payload diverges at byte offset {offset})")]
    TruncatedPayload {
        expected: u64,
        actual: u64,
        offset: u64,
    },
    #[error("non-positive dimensions {width}x{height} (header bytes 4..12)")]
    NonPositiveDims { width: i64, height: i64 },
    #[error("non-finite sample at byte offset {offset}")]
    NonFiniteSample { offset: u64 },
    #[error("unsupported TIFF: {0}")]
    UnsupportedTiff(String),
    #[error("TIFF is missing the quantization scale tag {SCALE_TAG}")]
    MissingScaleTag,
    #[error("corrupt strip {strip}: {reason}")]
    CorruptStrip { strip: usize, reason: String },
    #[error("invalid flow field: {0}")]
    InvalidFlow(String),
}

/// Dense per-pixel motion field, stored as two row-major planes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self, CodecError> {
        if width == 0 || height == 0 {
            return Err(CodecError::InvalidFlow(format!(
                "dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| CodecError::InvalidFlow("dimensions overflow".into()))?;
        if u.len() != n || v.len() != n {
            return Err(CodecError::InvalidFlow(format!(
                "plane lengths ({}, {}) do not match {width}x{height}",
                u.len(),
                v.len()
            )));
        }
        if let Some(i) = u.iter().chain(v.iter()).position(|x| !x.is_finite()) {
            return Err(CodecError::InvalidFlow(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    /// All-zero field.
    pub fn zeros(width: usize, height: usize) -> Result<Self, CodecError> {
        let n = width * height;
        Self::new(width, height, vec![0.0; n], vec![0.0; n])
    }

    /// Builds a field by evaluating `f(x, y) -> (u, v)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Result<Self, CodecError> {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(width, height, u, v)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Horizontal displacement plane.
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    /// Vertical displacement plane.
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn into_planes(self) -> (Vec<f64>, Vec<f64>) {
        (self.u, self.v)
    }
}
