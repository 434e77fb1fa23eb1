//! Middlebury `.flo` optical flow files.

use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid};

const MAGIC: f32 = 202021.25;
/// Largest accepted pixel count, a guard against corrupt headers.
const MAX_PIXELS: usize = 1 << 28;

/// Flow as bytes: magic, width, height, then row-major `(u, v)` pairs, all
/// little-endian 4-byte values.
pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * flow.len());
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for f in flow.iter() {
        out.extend_from_slice(&(f.x as f32).to_le_bytes());
        out.extend_from_slice(&(f.y as f32).to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<FlowField> {
    let word = |i: usize| -> Option<[u8; 4]> { bytes.get(4 * i..4 * i + 4).map(|s| s.try_into().expect("4 bytes")) };
    let header = (|| Some((f32::from_le_bytes(word(0)?), i32::from_le_bytes(word(1)?), i32::from_le_bytes(word(2)?))))();
    let Some((magic, w, h)) = header else {
        return Err(Error::format(path, "truncated .flo header"));
    };
    if magic != MAGIC {
        return Err(Error::format(path, format!("bad .flo magic {magic}")));
    }
    if w < 0 || h < 0 {
        return Err(Error::format(path, format!("negative .flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let pixels = w
        .checked_mul(h)
        .filter(|n| *n <= MAX_PIXELS)
        .ok_or_else(|| Error::format(path, format!(".flo dimensions {w}x{h} too large")))?;
    let expected = 12 + 8 * pixels;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(".flo payload has {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let data = (0..pixels)
        .map(|i| {
            let u = f32::from_le_bytes(word(3 + 2 * i).expect("length checked"));
            let v = f32::from_le_bytes(word(4 + 2 * i).expect("length checked"));
            Vector2::new(u as f64, v as f64)
        })
        .collect();
    Grid::from_vec(w, h, data)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    decode_flo(&super::read_bytes(path)?, path)
}

/// Components are stored as 4-byte floats, so values round to `f32`.
pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    super::write_bytes(path.as_ref(), &encode_flo(flow))
}
