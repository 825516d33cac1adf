//! File formats: grayscale PFM for depth maps, WMDT for raw tensors and
//! weights, binary PGM for masks.
//!
//! WMDT layout (all little-endian):
//!
//! ```text
//! b"WMDT" | version: u32 = 1 | ndim: u32 (2 or 3) | dims: ndim x u32 | f32 payload
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparsity::SparseMask;
use crate::tensor::Tensor;

const WMDT_MAGIC: &[u8; 4] = b"WMDT";
const WMDT_VERSION: u32 = 1;
// Refuse headers that would allocate more than this many floats.
const MAX_ELEMENTS: usize = 1 << 31;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Splits `count` whitespace-separated ASCII tokens off the front of `bytes`,
/// consuming exactly one whitespace byte after the last token.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut pos = 0;
    while tokens.len() < count {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader("header ended early".into()));
        }
        let tok = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::MalformedHeader("non-ascii header".into()))?;
        tokens.push(tok.to_string());
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedHeader("missing separator before payload".into()));
    }
    Ok((tokens, pos + 1))
}

fn parse_dim(tok: &str) -> Result<usize> {
    let v: usize = tok
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad dimension {tok:?}")))?;
    if v == 0 {
        return Err(Error::MalformedHeader("zero dimension".into()));
    }
    Ok(v)
}

fn checked_elements(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))
}

fn decode_floats(payload: &[u8], n: usize, little_endian: bool) -> Result<Vec<f32>> {
    let need = n * 4;
    if payload.len() < need {
        return Err(Error::Truncated {
            expected: need,
            found: payload.len(),
        });
    }
    let mut out = Vec::with_capacity(n);
    for (i, chunk) in payload[..need].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    match tokens[0].as_str() {
        "Pf" => {}
        "PF" => return Err(Error::UnsupportedFormat("color PFM (PF)".into())),
        other => return Err(Error::UnsupportedFormat(format!("magic {other:?}"))),
    }
    let width = parse_dim(&tokens[1])?;
    let height = parse_dim(&tokens[2])?;
    let scale: f32 = tokens[3]
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad scale {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::MalformedHeader(format!("bad scale {scale}")));
    }
    let n = checked_elements(&[width, height])?;
    let raw = decode_floats(&bytes[offset..], n, scale < 0.0)?;
    // PFM stores the bottom row first.
    let mut data = Vec::with_capacity(n);
    for row in raw.chunks_exact(width).rev() {
        data.extend_from_slice(row);
    }
    Tensor::new(height, width, 1, data)
}

pub fn encode_pfm(t: &Tensor) -> Result<Vec<u8>> {
    if t.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            found: t.channels(),
        });
    }
    let mut out = format!("Pf\n{} {}\n-1.0\n", t.width(), t.height()).into_bytes();
    out.reserve(t.len() * 4);
    for row in t.data().chunks_exact(t.width().max(1)).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_pfm(&read_bytes(path.as_ref())?)
}

pub fn write_pfm(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pfm(t)?)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if &magic != WMDT_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = word(4);
    if version != WMDT_VERSION {
        return Err(Error::UnsupportedFormat(format!("WMDT version {version}")));
    }
    let ndim = word(8) as usize;
    if ndim != 2 && ndim != 3 {
        return Err(Error::MalformedHeader(format!("ndim {ndim}")));
    }
    let header = 12 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndim).map(|k| word(12 + 4 * k) as usize).collect();
    let n = checked_elements(&dims)?;
    let payload = &bytes[header..];
    if payload.len() != n * 4 {
        return Err(Error::Truncated {
            expected: n * 4,
            found: payload.len(),
        });
    }
    let data = decode_floats(payload, n, true)?;
    let channels = if ndim == 3 { dims[2] } else { 1 };
    Tensor::new(dims[0], dims[1], channels, data)
}

/// Single-channel tensors are written with ndim 2, others with ndim 3.
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let dims: Vec<usize> = if t.channels() == 1 {
        vec![t.height(), t.width()]
    } else {
        vec![t.height(), t.width(), t.channels()]
    };
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + 4 * t.len());
    out.extend_from_slice(WMDT_MAGIC);
    out.extend_from_slice(&WMDT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&read_bytes(path.as_ref())?)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_tensor(t))
}

pub fn encode_pgm(mask: &SparseMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Any non-zero byte reads back as active.
pub fn decode_pgm(bytes: &[u8]) -> Result<SparseMask> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    if tokens[0] != "P5" {
        return Err(Error::UnsupportedFormat(format!("magic {:?}", tokens[0])));
    }
    let width = parse_dim(&tokens[1])?;
    let height = parse_dim(&tokens[2])?;
    if tokens[3] != "255" {
        return Err(Error::UnsupportedFormat(format!("maxval {}", tokens[3])));
    }
    let n = checked_elements(&[width, height])?;
    let payload = &bytes[offset..];
    if payload.len() < n {
        return Err(Error::Truncated {
            expected: n,
            found: payload.len(),
        });
    }
    SparseMask::from_bits(height, width, payload[..n].iter().map(|&b| b != 0).collect())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<SparseMask> {
    decode_pgm(&read_bytes(path.as_ref())?)
}

pub fn write_mask(mask: &SparseMask, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pgm(mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pfm_bytes(header: &str, vals: &[f32], le: bool) -> Vec<u8> {
        let mut b = header.as_bytes().to_vec();
        for v in vals {
            b.extend_from_slice(&if le { v.to_le_bytes() } else { v.to_be_bytes() });
        }
        b
    }

    #[test]
    fn pfm_rows_are_flipped() {
        let b = pfm_bytes("Pf\n2 2\n-1.0\n", &[1.0, 2.0, 3.0, 4.0], true);
        let t = decode_pfm(&b).unwrap();
        assert_eq!(t.data(), &[3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn pfm_big_endian() {
        let b = pfm_bytes("Pf\n2 1\n1.0\n", &[1.5, -2.0], false);
        assert_eq!(decode_pfm(&b).unwrap().data(), &[1.5, -2.0]);
    }

    #[test]
    fn pfm_color_rejected() {
        let b = pfm_bytes("PF\n1 1\n-1.0\n", &[0.0, 0.0, 0.0], true);
        assert!(matches!(decode_pfm(&b), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn pfm_nan_rejected() {
        let b = pfm_bytes("Pf\n2 1\n-1.0\n", &[1.0, f32::NAN], true);
        assert!(matches!(decode_pfm(&b), Err(Error::NonFinite(1))));
    }

    #[test]
    fn pfm_malformed_and_overflow() {
        assert!(matches!(
            decode_pfm(b"Pf\nx 2\n-1.0\n"),
            Err(Error::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_pfm(b"Pf\n4294967296 4294967296\n-1.0\n"),
            Err(Error::DimensionOverflow(_))
        ));
        assert!(matches!(
            decode_pfm(b"Pf\n2 2\n-1.0\n\0\0"),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn pfm_write_constant() {
        let t = Tensor::filled(4, 4, 1, 5.0);
        let b = encode_pfm(&t).unwrap();
        let header = b"Pf\n4 4\n-1.0\n";
        assert_eq!(&b[..header.len()], header);
        let floats: Vec<f32> = b[header.len()..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        assert_eq!(floats, vec![5.0; 16]);
    }

    #[test]
    fn pfm_requires_single_channel() {
        let t = Tensor::zeros(2, 2, 3);
        assert!(matches!(
            encode_pfm(&t),
            Err(Error::ChannelMismatch { expected: 1, found: 3 })
        ));
    }

    #[test]
    fn wmdt_hand_decode() {
        let mut b = b"WMDT".to_vec();
        for w in [1u32, 2, 2, 2] {
            b.extend_from_slice(&w.to_le_bytes());
        }
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let t = decode_tensor(&b).unwrap();
        assert_eq!(t.dims(), (2, 2, 1));
        assert_eq!(t[(0, 1)], 2.0);
        assert_eq!(t[(1, 0)], 3.0);
        assert_eq!(encode_tensor(&t), b);
    }

    #[test]
    fn wmdt_errors() {
        let mut b = encode_tensor(&Tensor::zeros(2, 2, 1));
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_tensor(&b), Err(Error::BadMagic(m)) if &m == b"XXXX"));
        let b = encode_tensor(&Tensor::zeros(2, 2, 3));
        assert!(matches!(
            decode_tensor(&b[..b.len() - 1]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn pgm_roundtrip() {
        let m = SparseMask::from_bits(2, 3, vec![true, false, true, false, false, true]).unwrap();
        let b = encode_pgm(&m);
        assert!(b.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(b[b.len() - 6..], [255, 0, 255, 0, 0, 255]);
        assert_eq!(decode_pgm(&b).unwrap(), m);
    }
}
