//! Grayscale portable float maps.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{DepthMap, Grid, ScalarMap};

/// `Pf` header, scale `-1.0` (little-endian), rows stored bottom to top.
pub fn encode_pfm(map: &ScalarMap) -> Vec<u8> {
    let (w, h) = map.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for v in (0..h).rev() {
        for u in 0..w {
            out.extend_from_slice(&(*map.get(u, v) as f32).to_le_bytes());
        }
    }
    out
}

/// Splits `count` whitespace-separated header tokens off the front of
/// `bytes`, skipping `#` comments; the last token must be followed by exactly
/// one whitespace byte. Returns the tokens and the payload offset.
pub(crate) fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        loop {
            let b = *bytes.get(i)?;
            if b == b'#' && !tokens.is_empty() {
                while *bytes.get(i)? != b'\n' {
                    i += 1;
                }
            } else if !b.is_ascii_whitespace() {
                break;
            }
            i += 1;
        }
        let start = i;
        while !bytes.get(i)?.is_ascii_whitespace() {
            i += 1;
        }
        tokens.push(String::from_utf8(bytes[start..i].to_vec()).ok()?);
    }
    Some((tokens, i + 1))
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<ScalarMap> {
    let (tokens, offset) = header_tokens(bytes, 4).ok_or_else(|| Error::format(path, "truncated PFM header"))?;
    if tokens[0] != "Pf" {
        return Err(Error::format(path, format!("unsupported PFM type {:?}", tokens[0])));
    }
    let parse = |t: &str| t.parse::<usize>().map_err(|_| Error::format(path, format!("bad PFM dimension {t:?}")));
    let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::format(path, format!("bad PFM scale {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, "PFM scale must be non-zero"));
    }
    let little = scale < 0.0;
    let count = w.checked_mul(h).ok_or_else(|| Error::format(path, "PFM dimensions overflow"))?;
    let payload = &bytes[offset.min(bytes.len())..];
    if Some(payload.len()) != count.checked_mul(4) {
        return Err(Error::format(
            path,
            format!("PFM payload has {} bytes, expected {}", payload.len(), 4 * count),
        ));
    }
    let mut data = vec![0.0; count];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().expect("4 bytes");
        let x = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row, col) = (h - 1 - i / w, i % w);
        data[row * w + col] = x as f64;
    }
    Grid::from_vec(w, h, data)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<ScalarMap> {
    let path = path.as_ref();
    decode_pfm(&super::read_bytes(path)?, path)
}

/// Values are stored as 4-byte floats, so they round to `f32`.
pub fn write_pfm(path: impl AsRef<Path>, map: &ScalarMap) -> Result<()> {
    super::write_bytes(path.as_ref(), &encode_pfm(map))
}

/// Depth with invalid pixels stored as NaN.
pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write_pfm(path, &depth.to_map(f64::NAN))
}

/// Depth whose non-finite or non-positive entries are marked invalid.
pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    Ok(DepthMap::new(read_pfm(path)?))
}
