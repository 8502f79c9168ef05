use super::{CodecError, FlowField};

/// Default number of quantization steps per pixel of displacement.
///
/// Covers roughly +/-512 px with a worst-case error of 1/128 px.
pub const DEFAULT_SCALE: u32 = 64;

/// Signed 16-bit fixed-point flow with a global scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedFlow {
    width: usize,
    height: usize,
    scale: u32,
    qu: Vec<i16>,
    qv: Vec<i16>,
}

impl QuantizedFlow {
    pub fn new(
        width: usize,
        height: usize,
        scale: u32,
        qu: Vec<i16>,
        qv: Vec<i16>,
    ) -> Result<Self, CodecError> {
        if width == 0 || height == 0 {
            return Err(CodecError::InvalidFlow(format!(
                "dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if scale == 0 {
            return Err(CodecError::InvalidFlow("scale must be at least 1".into()));
        }
        if qu.len() != width * height || qv.len() != width * height {
            return Err(CodecError::InvalidFlow(format!(
                "plane lengths ({}, {}) do not match {width}x{height}",
                qu.len(),
                qv.len()
            )));
        }
        Ok(Self {
            width,
            height,
            scale,
            qu,
            qv,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn qu(&self) -> &[i16] {
        &self.qu
    }

    pub fn qv(&self) -> &[i16] {
        &self.qv
    }
}

/// One 32-bit word per pixel: `u` in the high half, `v` in the low half.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedImage {
    width: usize,
    height: usize,
    words: Vec<u32>,
}

impl PackedImage {
    pub fn new(width: usize, height: usize, words: Vec<u32>) -> Result<Self, CodecError> {
        if width == 0 || height == 0 || words.len() != width * height {
            return Err(CodecError::InvalidFlow(format!(
                "{} words do not form a {width}x{height} image",
                words.len()
            )));
        }
        Ok(Self {
            width,
            height,
            words,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }
}

fn quantize_sample(x: f64, scale: f64) -> i16 {
    let lo = i16::MIN as f64 / scale;
    let hi = i16::MAX as f64 / scale;
    // f64::round rounds half away from zero.
    let q = (x.clamp(lo, hi) * scale).round();
    q.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Clamps each component to the representable range and rounds it to the
/// nearest multiple of `1 / scale`, ties away from zero.
///
/// # Panics
/// If `scale` is zero.
pub fn quantize(flow: &FlowField, scale: u32) -> QuantizedFlow {
    assert!(scale >= 1, "quantization scale must be at least 1");
    let s = scale as f64;
    QuantizedFlow {
        width: flow.width(),
        height: flow.height(),
        scale,
        qu: flow.u().iter().map(|&x| quantize_sample(x, s)).collect(),
        qv: flow.v().iter().map(|&x| quantize_sample(x, s)).collect(),
    }
}

pub fn dequantize(q: &QuantizedFlow) -> FlowField {
    let s = q.scale as f64;
    let u = q.qu.iter().map(|&a| a as f64 / s).collect();
    let v = q.qv.iter().map(|&b| b as f64 / s).collect();
    FlowField::new(q.width, q.height, u, v).expect("quantized planes are always valid")
}

pub fn pack(q: &QuantizedFlow) -> PackedImage {
    let words =
        q.qu.iter()
            .zip(&q.qv)
            .map(|(&a, &b)| ((a as u16 as u32) << 16) | b as u16 as u32)
            .collect();
    PackedImage {
        width: q.width,
        height: q.height,
        words,
    }
}

/// Inverse of [`pack`]. Fails only if `scale` is zero.
pub fn unpack(p: &PackedImage, scale: u32) -> Result<QuantizedFlow, CodecError> {
    let qu = p.words.iter().map(|&w| (w >> 16) as u16 as i16).collect();
    let qv = p.words.iter().map(|&w| w as u16 as i16).collect();
    QuantizedFlow::new(p.width, p.height, scale, qu, qv)
}
