//! 8-bit images as binary PPM/PGM or PNG, chosen by file extension.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, PixelMask};

use super::pfm::header_tokens;

fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (`P6`) for three channels, PGM (`P5`) for one; maxval 255.
pub fn encode_ppm(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.channels() {
        3 => "P6",
        1 => "P5",
        c => return Err(Error::InvalidArgument(format!("cannot store {c}-channel image as PNM"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|x| quantize(*x)));
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Image> {
    let (tokens, offset) = header_tokens(bytes, 4).ok_or_else(|| Error::format(path, "truncated PNM header"))?;
    let channels = match tokens[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        "P1" | "P2" | "P3" | "P4" => {
            return Err(Error::format(path, format!("unsupported PNM variant {}", tokens[0])));
        }
        t => return Err(Error::format(path, format!("not a PNM file (magic {t:?})"))),
    };
    let num = |t: &str| t.parse::<usize>().map_err(|_| Error::format(path, format!("bad PNM header field {t:?}")));
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if !(1..=255).contains(&maxval) {
        return Err(Error::format(path, format!("unsupported PNM maxval {maxval}")));
    }
    let count = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::format(path, "PNM dimensions overflow"))?;
    let payload = &bytes[offset.min(bytes.len())..];
    if payload.len() != count {
        return Err(Error::format(
            path,
            format!("PNM payload has {} bytes, expected {count}", payload.len()),
        ));
    }
    let scale = maxval as f64;
    Image::new(w, h, channels, payload.iter().map(|b| *b as f64 / scale).collect())
        .map_err(|e| Error::format(path, e.to_string()))
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::format(path, other.to_string()),
    }
}

/// Reads a PNG (converted to gray or RGB) or a binary PNM file.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = super::read_bytes(path)?;
    if !is_png(path) {
        return decode_ppm(&bytes, path);
    }
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| image_error(path, e))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = if decoded.color().has_color() {
        (3, decoded.into_rgb8().into_raw())
    } else {
        (1, decoded.into_luma8().into_raw())
    };
    Image::new(w, h, channels, raw.iter().map(|b| *b as f64 / 255.0).collect())
}

/// Writes PNG when the extension is `.png`, binary PNM otherwise. Values are
/// clamped to [0, 1] and quantized to 8 bits.
pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    if !is_png(path) {
        return super::write_bytes(path, &encode_ppm(image)?);
    }
    let color = match image.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::InvalidArgument(format!("cannot store {c}-channel image as PNG"))),
    };
    let raw: Vec<u8> = image.data().iter().map(|x| quantize(*x)).collect();
    image::save_buffer_with_format(
        path,
        &raw,
        image.width() as u32,
        image.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| image_error(path, e))
}

/// Writes a [0, 1] mask as a single-channel 8-bit image.
pub fn write_mask(path: impl AsRef<Path>, mask: &PixelMask) -> Result<()> {
    let image = Image::new(mask.width(), mask.height(), 1, mask.data().to_vec())?;
    write_image(path, &image)
}

/// Reads a mask from the first channel of an image.
pub fn read_mask(path: impl AsRef<Path>) -> Result<PixelMask> {
    let image = read_image(path)?;
    Ok(Grid::from_fn(image.width(), image.height(), |u, v| image.pixel(u, v)[0]))
}
