//! File formats, visualization and sample directories.

mod flo;
mod pfm;
mod pnm;
mod sample_dir;
mod viz;

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use flo::{decode_flo, encode_flo, read_flo, write_flo};
pub use pfm::{decode_pfm, encode_pfm, read_depth, read_pfm, write_depth, write_pfm};
pub use pnm::{decode_ppm, encode_ppm, read_image, read_mask, write_image, write_mask};
pub use sample_dir::{read_manifest, read_sample, write_sample, FileEntry, Manifest, MANIFEST_VERSION};
pub use viz::{colorize_flow, colorize_map, Colormap, OutputFormat, VisualizationSpec};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push(b'\n');
    write_bytes(path, &text)
}
