//! Minimal little-endian TIFF container for [`PackedImage`]s.
//!
//! Only the layout written by [`encode_tiff`] is accepted on decode: one
//! 32-bit sample per pixel, Deflate-compressed strips, no predictor, no
//! tiles, a single IFD. Strip payloads are copied byte-for-byte; samples are
//! never converted to or from floating point.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use super::{CodecError, PackedImage};

/// Private tag holding the quantization scale (type LONG).
pub const SCALE_TAG: u16 = 65000;

const ROWS_PER_STRIP: usize = 64;

const TAG_IMAGE_WIDTH: u16 = 256;
const TAG_IMAGE_LENGTH: u16 = 257;
const TAG_BITS_PER_SAMPLE: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_PHOTOMETRIC: u16 = 262;
const TAG_FILL_ORDER: u16 = 266;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES_PER_PIXEL: u16 = 277;
const TAG_ROWS_PER_STRIP: u16 = 278;
const TAG_STRIP_BYTE_COUNTS: u16 = 279;
const TAG_PLANAR_CONFIG: u16 = 284;
const TAG_PREDICTOR: u16 = 317;
const TAG_TILE_WIDTH: u16 = 322;
const TAG_TILE_LENGTH: u16 = 323;
const TAG_TILE_OFFSETS: u16 = 324;
const TAG_TILE_BYTE_COUNTS: u16 = 325;
const TAG_SAMPLE_FORMAT: u16 = 339;

const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;

const COMPRESSION_DEFLATE: u32 = 8;
const SAMPLE_FORMAT_IEEE_FP: u32 = 3;

struct Entry {
    tag: u16,
    kind: u16,
    values: Vec<u32>,
}

impl Entry {
    fn short(tag: u16, value: u16) -> Self {
        Self {
            tag,
            kind: TYPE_SHORT,
            values: vec![value as u32],
        }
    }

    fn long(tag: u16, values: Vec<u32>) -> Self {
        Self {
            tag,
            kind: TYPE_LONG,
            values,
        }
    }

    fn value_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for &v in &self.values {
            match self.kind {
                TYPE_SHORT => out.extend_from_slice(&(v as u16).to_le_bytes()),
                _ => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        out
    }
}

fn too_large(what: &str) -> CodecError {
    CodecError::UnsupportedTiff(format!("{what} exceeds the 32-bit TIFF offset range"))
}

/// Writes `image` as a single-image Deflate TIFF with `scale` in [`SCALE_TAG`].
pub fn encode_tiff(image: &PackedImage, scale: u32) -> Result<Vec<u8>, CodecError> {
    if scale == 0 {
        return Err(CodecError::InvalidFlow("scale must be at least 1".into()));
    }
    let width = image.width();
    let height = image.height();
    let width32 = u32::try_from(width).map_err(|_| too_large("width"))?;
    let height32 = u32::try_from(height).map_err(|_| too_large("height"))?;
    let rows_per_strip = height.min(ROWS_PER_STRIP);

    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes()); // IFD offset, patched below

    let mut offsets = Vec::new();
    let mut counts = Vec::new();
    for rows in image.words().chunks(rows_per_strip * width) {
        let mut raw = Vec::with_capacity(rows.len() * 4);
        for w in rows {
            raw.extend_from_slice(&w.to_le_bytes());
        }
        let mut enc = ZlibEncoder::new(Vec::new(), Compression::best());
        enc.write_all(&raw).expect("writing to a Vec cannot fail");
        let compressed = enc.finish().expect("writing to a Vec cannot fail");
        offsets.push(u32::try_from(out.len()).map_err(|_| too_large("strip offset"))?);
        counts.push(u32::try_from(compressed.len()).map_err(|_| too_large("strip size"))?);
        out.extend_from_slice(&compressed);
    }
    if out.len() % 2 == 1 {
        out.push(0);
    }

    // Sorted by tag, as TIFF requires.
    let entries = vec![
        Entry::long(TAG_IMAGE_WIDTH, vec![width32]),
        Entry::long(TAG_IMAGE_LENGTH, vec![height32]),
        Entry::short(TAG_BITS_PER_SAMPLE, 32),
        Entry::short(TAG_COMPRESSION, COMPRESSION_DEFLATE as u16),
        Entry::short(TAG_PHOTOMETRIC, 1),
        Entry::long(TAG_STRIP_OFFSETS, offsets),
        Entry::short(TAG_SAMPLES_PER_PIXEL, 1),
        Entry::long(TAG_ROWS_PER_STRIP, vec![rows_per_strip as u32]),
        Entry::long(TAG_STRIP_BYTE_COUNTS, counts),
        Entry::short(TAG_PLANAR_CONFIG, 1),
        Entry::short(TAG_SAMPLE_FORMAT, SAMPLE_FORMAT_IEEE_FP as u16),
        Entry::long(SCALE_TAG, vec![scale]),
    ];

    let ifd_offset = out.len();
    let ifd_len = 2 + 12 * entries.len() + 4;
    let mut overflow_at = ifd_offset + ifd_len;
    let mut ifd = Vec::with_capacity(ifd_len);
    let mut overflow = Vec::new();
    ifd.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for e in &entries {
        ifd.extend_from_slice(&e.tag.to_le_bytes());
        ifd.extend_from_slice(&e.kind.to_le_bytes());
        ifd.extend_from_slice(&(e.values.len() as u32).to_le_bytes());
        let mut bytes = e.value_bytes();
        if bytes.len() <= 4 {
            bytes.resize(4, 0);
            ifd.extend_from_slice(&bytes);
        } else {
            let at = u32::try_from(overflow_at).map_err(|_| too_large("IFD"))?;
            ifd.extend_from_slice(&at.to_le_bytes());
            overflow_at += bytes.len();
            overflow.extend_from_slice(&bytes);
        }
    }
    ifd.extend_from_slice(&0u32.to_le_bytes());

    let ifd_offset32 = u32::try_from(ifd_offset).map_err(|_| too_large("IFD offset"))?;
    out[4..8].copy_from_slice(&ifd_offset32.to_le_bytes());
    out.extend_from_slice(&ifd);
    out.extend_from_slice(&overflow);
    Ok(out)
}

fn unsupported(msg: impl Into<String>) -> CodecError {
    CodecError::UnsupportedTiff(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn slice(&self, at: usize, len: usize) -> Result<&[u8], CodecError> {
        at.checked_add(len)
            .and_then(|end| self.bytes.get(at..end))
            .ok_or_else(|| {
                unsupported(format!(
                    "structure at byte offset {at} runs past end of file"
                ))
            })
    }

    fn u16(&self, at: usize) -> Result<u16, CodecError> {
        let b = self.slice(at, 2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&self, at: usize) -> Result<u32, CodecError> {
        let b = self.slice(at, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads the SHORT/LONG values of the IFD entry starting at `at`.
    /// Entries of any other type yield `None`.
    fn entry(&self, at: usize) -> Result<(u16, Option<Vec<u32>>), CodecError> {
        let tag = self.u16(at)?;
        let kind = self.u16(at + 2)?;
        let count = self.u32(at + 4)? as usize;
        let size = match kind {
            TYPE_SHORT => 2,
            TYPE_LONG => 4,
            _ => return Ok((tag, None)),
        };
        let total = count
            .checked_mul(size)
            .ok_or_else(|| unsupported(format!("tag {tag} count overflows")))?;
        let base = if total <= 4 {
            at + 8
        } else {
            self.u32(at + 8)? as usize
        };
        let raw = self.slice(base, total)?;
        let values = raw
            .chunks_exact(size)
            .map(|c| match size {
                2 => u16::from_le_bytes([c[0], c[1]]) as u32,
                _ => u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
            })
            .collect();
        Ok((tag, Some(values)))
    }
}

fn single(tags: &BTreeMap<u16, Vec<u32>>, tag: u16, name: &str) -> Result<Option<u32>, CodecError> {
    match tags.get(&tag) {
        None => Ok(None),
        Some(v) if v.len() == 1 => Ok(Some(v[0])),
        Some(v) => Err(unsupported(format!(
            "{name} has {} values, expected 1",
            v.len()
        ))),
    }
}

fn require(tags: &BTreeMap<u16, Vec<u32>>, tag: u16, name: &str) -> Result<u32, CodecError> {
    single(tags, tag, name)?.ok_or_else(|| unsupported(format!("missing {name}")))
}

fn expect_default(
    tags: &BTreeMap<u16, Vec<u32>>,
    tag: u16,
    name: &str,
    wanted: u32,
) -> Result<(), CodecError> {
    match single(tags, tag, name)? {
        None => Ok(()),
        Some(v) if v == wanted => Ok(()),
        Some(v) => Err(unsupported(format!(
            "{name} = {v}, only {wanted} is supported"
        ))),
    }
}

/// Reads a TIFF written by [`encode_tiff`], returning the packed words and
/// the quantization scale.
pub fn decode_tiff(bytes: &[u8]) -> Result<(PackedImage, u32), CodecError> {
    let r = Reader { bytes };
    match r.slice(0, 2)? {
        b"II" => {}
        b"MM" => return Err(unsupported("big-endian byte order")),
        _ => return Err(unsupported("not a TIFF file")),
    }
    match r.u16(2)? {
        42 => {}
        43 => return Err(unsupported("BigTIFF")),
        v => return Err(unsupported(format!("bad TIFF version {v}"))),
    }
    let ifd = r.u32(4)? as usize;
    let count = r.u16(ifd)? as usize;
    let mut tags = BTreeMap::new();
    for k in 0..count {
        let (tag, values) = r.entry(ifd + 2 + 12 * k)?;
        if let Some(values) = values {
            tags.insert(tag, values);
        } else if matches!(
            tag,
            TAG_IMAGE_WIDTH
                | TAG_IMAGE_LENGTH
                | TAG_BITS_PER_SAMPLE
                | TAG_COMPRESSION
                | TAG_STRIP_OFFSETS
                | TAG_ROWS_PER_STRIP
                | TAG_STRIP_BYTE_COUNTS
                | SCALE_TAG
        ) {
            return Err(unsupported(format!(
                "tag {tag} has an unexpected field type"
            )));
        }
    }
    if r.u32(ifd + 2 + 12 * count)? != 0 {
        return Err(unsupported("more than one image"));
    }

    for tile_tag in [
        TAG_TILE_WIDTH,
        TAG_TILE_LENGTH,
        TAG_TILE_OFFSETS,
        TAG_TILE_BYTE_COUNTS,
    ] {
        if tags.contains_key(&tile_tag) {
            return Err(unsupported("tiled layout"));
        }
    }
    let width = require(&tags, TAG_IMAGE_WIDTH, "ImageWidth")? as usize;
    let height = require(&tags, TAG_IMAGE_LENGTH, "ImageLength")? as usize;
    if width == 0 || height == 0 {
        return Err(unsupported(format!("empty image {width}x{height}")));
    }
    match tags.get(&TAG_BITS_PER_SAMPLE).map(Vec::as_slice) {
        Some([32]) => {}
        other => {
            return Err(unsupported(format!(
                "BitsPerSample {other:?}, expected [32]"
            )))
        }
    }
    let compression = require(&tags, TAG_COMPRESSION, "Compression")?;
    if compression != COMPRESSION_DEFLATE {
        return Err(unsupported(format!(
            "Compression = {compression}, expected 8 (Deflate)"
        )));
    }
    match tags.get(&TAG_SAMPLE_FORMAT).map(Vec::as_slice) {
        Some([SAMPLE_FORMAT_IEEE_FP]) => {}
        other => return Err(unsupported(format!("SampleFormat {other:?}, expected [3]"))),
    }
    expect_default(&tags, TAG_SAMPLES_PER_PIXEL, "SamplesPerPixel", 1)?;
    expect_default(&tags, TAG_PLANAR_CONFIG, "PlanarConfiguration", 1)?;
    expect_default(&tags, TAG_PREDICTOR, "Predictor", 1)?;
    expect_default(&tags, TAG_FILL_ORDER, "FillOrder", 1)?;

    let scale = single(&tags, SCALE_TAG, "scale tag")?.ok_or(CodecError::MissingScaleTag)?;
    if scale == 0 {
        return Err(unsupported("scale tag is zero"));
    }

    let rows_per_strip = (require(&tags, TAG_ROWS_PER_STRIP, "RowsPerStrip")? as usize).min(height);
    if rows_per_strip == 0 {
        return Err(unsupported("RowsPerStrip = 0"));
    }
    let offsets = tags
        .get(&TAG_STRIP_OFFSETS)
        .ok_or_else(|| unsupported("missing StripOffsets"))?;
    let counts = tags
        .get(&TAG_STRIP_BYTE_COUNTS)
        .ok_or_else(|| unsupported("missing StripByteCounts"))?;
    let strips = height.div_ceil(rows_per_strip);
    if offsets.len() != strips || counts.len() != strips {
        return Err(unsupported(format!(
            "expected {strips} strips, found {} offsets and {} byte counts",
            offsets.len(),
            counts.len()
        )));
    }

    let mut words = Vec::with_capacity(width * height);
    for (strip, (&offset, &count)) in offsets.iter().zip(counts).enumerate() {
        let rows = rows_per_strip.min(height - strip * rows_per_strip);
        let expected = rows * width * 4;
        let compressed =
            r.slice(offset as usize, count as usize)
                .map_err(|_| CodecError::CorruptStrip {
                    strip,
                    reason: format!("{count} bytes at offset {offset} run past end of file"),
                })?;
        let mut raw = Vec::with_capacity(expected);
        ZlibDecoder::new(compressed)
            .take(expected as u64 + 1)
            .read_to_end(&mut raw)
            .map_err(|e| CodecError::CorruptStrip {
                strip,
                reason: e.to_string(),
            })?;
        if raw.len() != expected {
            return Err(CodecError::CorruptStrip {
                strip,
                reason: format!("inflated to {} bytes, expected {expected}", raw.len()),
            });
        }
        words.extend(
            raw.chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
    }
    Ok((PackedImage::new(width, height, words)?, scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(width: usize, height: usize, words: Vec<u32>) -> PackedImage {
        PackedImage::new(width, height, words).unwrap()
    }

    #[test]
    fn single_zero_word_round_trips() {
        let img = image(1, 1, vec![0]);
        let bytes = encode_tiff(&img, 64).unwrap();
        assert_eq!(&bytes[..4], b"II*\0");
        assert_eq!(decode_tiff(&bytes).unwrap(), (img, 64));
    }

    #[test]
    fn nan_patterns_survive() {
        let words = vec![
            0x7FC0_0000,
            0xFFC0_0001,
            0x7F80_0001,
            0xFF80_0000,
            0x7F80_0000,
            0x0000_0001,
        ];
        let img = image(3, 2, words);
        let (back, scale) = decode_tiff(&encode_tiff(&img, 9).unwrap()).unwrap();
        assert_eq!(back, img);
        assert_eq!(scale, 9);
    }

    #[test]
    fn multi_strip_image_round_trips() {
        let words: Vec<u32> = (0..7 * 150u32)
            .map(|i| i.wrapping_mul(2_654_435_761))
            .collect();
        let img = image(7, 150, words);
        let bytes = encode_tiff(&img, 3).unwrap();
        assert_eq!(decode_tiff(&bytes).unwrap(), (img, 3));
    }

    /// Rewrites the inline value of `tag` in an encoded file.
    fn patch_tag(bytes: &mut [u8], tag: u16, value: u32) {
        let ifd = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n = u16::from_le_bytes([bytes[ifd], bytes[ifd + 1]]) as usize;
        for k in 0..n {
            let at = ifd + 2 + 12 * k;
            if u16::from_le_bytes([bytes[at], bytes[at + 1]]) == tag {
                let kind = u16::from_le_bytes([bytes[at + 2], bytes[at + 3]]);
                if kind == TYPE_SHORT {
                    bytes[at + 8..at + 10].copy_from_slice(&(value as u16).to_le_bytes());
                } else {
                    bytes[at + 8..at + 12].copy_from_slice(&value.to_le_bytes());
                }
                return;
            }
        }
        panic!("tag {tag} not present");
    }

    fn retag(bytes: &mut [u8], from: u16, to: u16) {
        let ifd = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n = u16::from_le_bytes([bytes[ifd], bytes[ifd + 1]]) as usize;
        for k in 0..n {
            let at = ifd + 2 + 12 * k;
            if u16::from_le_bytes([bytes[at], bytes[at + 1]]) == from {
                bytes[at..at + 2].copy_from_slice(&to.to_le_bytes());
            }
        }
    }

    #[test]
    fn rejects_foreign_layouts() {
        let good = encode_tiff(&image(2, 2, vec![1, 2, 3, 4]), 64).unwrap();

        let mut b = good.clone();
        patch_tag(&mut b, TAG_BITS_PER_SAMPLE, 16);
        assert!(matches!(
            decode_tiff(&b),
            Err(CodecError::UnsupportedTiff(_))
        ));

        let mut b = good.clone();
        patch_tag(&mut b, TAG_COMPRESSION, 5);
        assert!(matches!(
            decode_tiff(&b),
            Err(CodecError::UnsupportedTiff(_))
        ));

        let mut b = good.clone();
        retag(&mut b, TAG_PLANAR_CONFIG, TAG_PREDICTOR);
        patch_tag(&mut b, TAG_PREDICTOR, 2);
        assert!(matches!(
            decode_tiff(&b),
            Err(CodecError::UnsupportedTiff(_))
        ));

        let mut b = good.clone();
        retag(&mut b, TAG_PLANAR_CONFIG, TAG_TILE_WIDTH);
        assert!(matches!(
            decode_tiff(&b),
            Err(CodecError::UnsupportedTiff(_))
        ));

        let mut b = good.clone();
        b[0..2].copy_from_slice(b"MM");
        assert!(matches!(
            decode_tiff(&b),
            Err(CodecError::UnsupportedTiff(_))
        ));

        assert!(matches!(
            decode_tiff(b"II"),
            Err(CodecError::UnsupportedTiff(_))
        ));
    }

    #[test]
    fn missing_scale_tag() {
        let mut b = encode_tiff(&image(1, 1, vec![5]), 64).unwrap();
        retag(&mut b, SCALE_TAG, 65001);
        assert_eq!(decode_tiff(&b), Err(CodecError::MissingScaleTag));
    }

    #[test]
    fn corrupt_strip() {
        let mut b = encode_tiff(&image(4, 4, (0..16).collect()), 64).unwrap();
        // Strip data starts right after the 8-byte header; flip its zlib header.
        b[8] ^= 0xFF;
        b[9] ^= 0xFF;
        assert!(matches!(
            decode_tiff(&b),
            Err(CodecError::CorruptStrip { strip: 0, .. })
        ));
    }
}
