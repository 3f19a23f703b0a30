//! `FMP1` feature map container.
//!
//! Layout, all little-endian:
//!
//! | offset | size        | content                              |
//! |--------|-------------|--------------------------------------|
//! | 0      | 4           | magic `b"FMP1"`                      |
//! | 4      | 4           | height (`u32`)                       |
//! | 8      | 4           | width (`u32`)                        |
//! | 12     | 4           | channels (`u32`)                     |
//! | 16     | `4 * H*W*C` | `f32` payload, row-major `(y, x, c)` |
//!
//! Score maps are stored with `C = 1`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{AnomalyMap, FeatureMap};

pub const MAGIC: [u8; 4] = *b"FMP1";
pub const HEADER_LEN: usize = 16;

/// Parsed header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FmapHeader {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl FmapHeader {
    /// Number of payload values, or `None` if it does not fit in memory.
    pub fn value_count(&self) -> Option<usize> {
        (self.height as usize)
            .checked_mul(self.width as usize)?
            .checked_mul(self.channels as usize)
            .filter(|n| n.checked_mul(4).and_then(|b| b.checked_add(HEADER_LEN)).is_some())
    }
}

fn format_err(offset: usize, reason: impl Into<alloc::string::String>) -> Error {
    Error::Format {
        offset,
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(bytes.len(), "file ends inside the header"))
}

pub fn decode_header(bytes: &[u8]) -> Result<FmapHeader> {
    match bytes.get(0..4) {
        Some(m) if m == MAGIC => {}
        Some(_) => return Err(format_err(0, "bad magic, expected \"FMP1\"")),
        None => return Err(format_err(bytes.len(), "file ends inside the magic")),
    }
    let header = FmapHeader {
        height: read_u32(bytes, 4)?,
        width: read_u32(bytes, 8)?,
        channels: read_u32(bytes, 12)?,
    };
    if header.height == 0 || header.width == 0 || header.channels == 0 {
        return Err(format_err(4, "zero dimension in header"));
    }
    if header.value_count().is_none() {
        return Err(format_err(4, "header dimensions overflow addressable size"));
    }
    Ok(header)
}

/// Parses a complete file into a feature map; values are widened to `f64`.
pub fn decode(bytes: &[u8]) -> Result<FeatureMap> {
    let header = decode_header(bytes)?;
    let n = header.value_count().expect("checked in decode_header");
    let expected = HEADER_LEN + 4 * n;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("payload truncated: {} bytes, expected {expected}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after payload"));
    }
    let mut data = Vec::with_capacity(n);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(format_err(HEADER_LEN + 4 * i, "non-finite payload value"));
        }
        data.push(f64::from(v));
    }
    FeatureMap::new(
        header.height as usize,
        header.width as usize,
        header.channels as usize,
        data,
    )
}

fn encode_raw(height: usize, width: usize, channels: usize, values: &[f64]) -> Result<Vec<u8>> {
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::param("dimension exceeds u32"));
    let (h, w, c) = (dim(height)?, dim(width)?, dim(channels)?);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&c.to_le_bytes());
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Serializes a feature map; values are narrowed to `f32`.
pub fn encode(fm: &FeatureMap) -> Result<Vec<u8>> {
    encode_raw(fm.height(), fm.width(), fm.channels(), fm.data())
}

pub fn encode_scores(am: &AnomalyMap) -> Result<Vec<u8>> {
    encode_raw(am.height(), am.width(), 1, am.scores())
}

/// Reads a single-channel file back as a score map.
pub fn decode_scores(bytes: &[u8]) -> Result<AnomalyMap> {
    let fm = decode(bytes)?;
    if fm.channels() != 1 {
        return Err(format_err(12, "score maps must have exactly one channel"));
    }
    AnomalyMap::new(fm.height(), fm.width(), fm.into_data())
        .map_err(|_| format_err(HEADER_LEN, "score map contains negative values"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn header(h: u32, w: u32, c: u32) -> Vec<u8> {
        let mut b = MAGIC.to_vec();
        for v in [h, w, c] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn decodes_small_map() {
        let mut b = header(2, 3, 1);
        for i in 0..6 {
            b.extend_from_slice(&(i as f32).to_le_bytes());
        }
        let fm = decode(&b).unwrap();
        assert_eq!((fm.height(), fm.width(), fm.channels()), (2, 3, 1));
        assert_eq!(fm.at(1, 2, 0), 5.0);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut b = b"XXXX".to_vec();
        b.extend_from_slice(&header(1, 1, 1)[4..]);
        b.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(matches!(decode(&b), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut b = header(2, 2, 1);
        for _ in 0..3 {
            b.extend_from_slice(&0.5f32.to_le_bytes());
        }
        match decode(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 28),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncated_header() {
        assert!(matches!(decode(b"FMP1\x01\x00"), Err(Error::Format { .. })));
        assert!(matches!(decode(b"FM"), Err(Error::Format { .. })));
    }

    #[test]
    fn rejects_overflowing_dimensions() {
        let b = header(u32::MAX, u32::MAX, u32::MAX);
        assert!(matches!(decode(&b), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn rejects_nan_payload() {
        let mut b = header(1, 1, 1);
        b.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&b), Err(Error::Format { offset: 16, .. })));
    }

    #[test]
    fn header_bytes_are_little_endian() {
        let fm = FeatureMap::new(1, 2, 1, vec![1.0, -2.5]).unwrap();
        let b = encode(&fm).unwrap();
        assert_eq!(&b[..16], &[b'F', b'M', b'P', b'1', 1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&b[20..24], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn scores_round_trip() {
        let am = AnomalyMap::new(2, 2, vec![0.0, 0.25, 1.5, 3.0]).unwrap();
        let back = decode_scores(&encode_scores(&am).unwrap()).unwrap();
        assert_eq!(back, am);
    }
}
