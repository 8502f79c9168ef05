use super::{CodecError, FlowField};

/// Magic number opening every `.flo` file ("PIEH" in ASCII).
pub const FLO_MAGIC: f32 = 202021.25;

/// Magic + width + height.
pub const FLO_HEADER_LEN: usize = 12;

/// Decodes a Middlebury `.flo` byte stream.
///
/// Samples are widened to `f64` exactly. The byte count must match the
/// header dimensions; trailing bytes are rejected like missing ones.
pub fn read_flo(bytes: &[u8]) -> Result<FlowField, CodecError> {
    if bytes.len() < 4 {
        return Err(CodecError::TruncatedPayload {
            expected: FLO_HEADER_LEN as u64,
            actual: bytes.len() as u64,
            offset: bytes.len() as u64,
        });
    }
    let magic = f32::from_le_bytes(word(bytes, 0));
    if magic.to_bits() != FLO_MAGIC.to_bits() {
        return Err(CodecError::BadMagic {
            found: format!("{magic:?}"),
            bits: magic.to_bits(),
        });
    }
    if bytes.len() < FLO_HEADER_LEN {
        return Err(CodecError::TruncatedPayload {
            expected: FLO_HEADER_LEN as u64,
            actual: bytes.len() as u64,
            offset: bytes.len() as u64,
        });
    }
    let width = i32::from_le_bytes(word(bytes, 4)) as i64;
    let height = i32::from_le_bytes(word(bytes, 8)) as i64;
    if width <= 0 || height <= 0 {
        return Err(CodecError::NonPositiveDims { width, height });
    }

    let n = (width as u64) * (height as u64);
    let expected = FLO_HEADER_LEN as u64 + 8 * n;
    let actual = bytes.len() as u64;
    if actual != expected {
        return Err(CodecError::TruncatedPayload {
            expected,
            actual,
            offset: expected.min(actual),
        });
    }

    let n = n as usize;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for (k, pair) in bytes[FLO_HEADER_LEN..].chunks_exact(8).enumerate() {
        let a = f32::from_le_bytes([pair[0], pair[1], pair[2], pair[3]]);
        let b = f32::from_le_bytes([pair[4], pair[5], pair[6], pair[7]]);
        let offset = (FLO_HEADER_LEN + 8 * k) as u64;
        if !a.is_finite() {
            return Err(CodecError::NonFiniteSample { offset });
        }
        if !b.is_finite() {
            return Err(CodecError::NonFiniteSample { offset: offset + 4 });
        }
        u.push(a as f64);
        v.push(b as f64);
    }
    FlowField::new(width as usize, height as usize, u, v)
}

/// Encodes a flow field as `.flo`, narrowing each sample to `f32` with
/// round-to-nearest-even.
///
/// Fails if a sample overflows the `f32` range or the dimensions do not fit
/// the format's signed 32-bit header fields.
pub fn write_flo(flow: &FlowField) -> Result<Vec<u8>, CodecError> {
    let (w, h) = (flow.width(), flow.height());
    if w > i32::MAX as usize || h > i32::MAX as usize {
        return Err(CodecError::InvalidFlow(format!(
            "{w}x{h} exceeds the .flo header range"
        )));
    }
    let mut out = Vec::with_capacity(FLO_HEADER_LEN + 8 * flow.len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (&a, &b) in flow.u().iter().zip(flow.v()) {
        for x in [a, b] {
            let narrowed = x as f32;
            if !narrowed.is_finite() {
                return Err(CodecError::NonFiniteSample {
                    offset: out.len() as u64,
                });
            }
            out.extend_from_slice(&narrowed.to_le_bytes());
        }
    }
    Ok(out)
}

fn word(bytes: &[u8], at: usize) -> [u8; 4] {
    [bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]
}
