//! A simulated sample stored as a directory of interchange files plus a
//! manifest naming each file's role.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Intrinsics};
use crate::simulator::SceneSample;

use super::{read_depth, read_flo, read_image, read_json, read_mask, write_depth, write_flo, write_image, write_json, write_mask, write_pfm};

pub const MANIFEST_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// SHA-256 of the compact JSON encoding of the generating configuration.
    pub config_sha256: String,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    /// Path of the file with `role`, relative to `dir`.
    pub fn path_of(&self, dir: &Path, role: &str) -> Result<PathBuf> {
        self.files
            .iter()
            .find(|f| f.role == role)
            .map(|f| dir.join(&f.path))
            .ok_or_else(|| Error::format(dir.join(MANIFEST_FILE), format!("no file with role {role:?}")))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Camera {
    intrinsics: Intrinsics,
    baseline: f64,
}

fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config).map_err(|e| Error::InvalidArgument(format!("config is not serializable: {e}")))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes every field of `sample` into `dir` (created if missing) together
/// with `config.json` and `manifest.json`. Images are stored at 8 bits and
/// flows and depths at single precision.
pub fn write_sample<C: Serialize>(dir: impl AsRef<Path>, sample: &SceneSample, config: &C, seed: u64) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    let mut add = |path: &str, role: &str| -> PathBuf {
        files.push(FileEntry {
            path: path.into(),
            role: role.into(),
        });
        dir.join(path)
    };

    write_json(add("config.json", "config"), config)?;
    write_json(
        add("camera.json", "camera"),
        &Camera {
            intrinsics: sample.intrinsics,
            baseline: sample.baseline,
        },
    )?;
    write_json(add("pose.json", "pose"), &sample.pose)?;
    write_image(add("image_t.ppm", "image_t"), &sample.image_t)?;
    write_image(add("image_t1.ppm", "image_t1"), &sample.image_t1)?;
    write_image(add("image_right.ppm", "image_right"), &sample.image_right)?;
    write_depth(add("depth.pfm", "depth"), &sample.depth)?;
    write_depth(add("depth_right.pfm", "depth_right"), &sample.depth_right)?;
    write_flo(add("optical_flow.flo", "optical_flow"), &sample.optical_flow)?;
    write_flo(add("backward_flow.flo", "backward_flow"), &sample.backward_flow)?;
    write_flo(add("rigid_flow.flo", "rigid_flow"), &sample.rigid_flow)?;
    write_mask(add("moving_mask.png", "moving_mask"), &sample.moving_mask)?;
    write_mask(add("occluded.png", "occluded"), &sample.occluded)?;
    write_pfm(add("rigid_map_gt.pfm", "rigid_map_gt"), &sample.rigid_map())?;

    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        config_sha256: config_hash(config)?,
        seed,
        files,
    };
    for f in &manifest.files {
        if !dir.join(&f.path).is_file() {
            return Err(Error::format(dir.join(&f.path), "listed in manifest but missing"));
        }
    }
    write_json(dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let manifest: Manifest = read_json(&path)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported manifest version {}", manifest.format_version),
        ));
    }
    Ok(manifest)
}

/// Loads a directory written by [`write_sample`].
pub fn read_sample(dir: impl AsRef<Path>) -> Result<(SceneSample, Manifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let path = |role: &str| manifest.path_of(dir, role);
    let camera: Camera = read_json(path("camera")?)?;
    let pose: CameraPose = read_json(path("pose")?)?;
    let sample = SceneSample {
        intrinsics: camera.intrinsics,
        baseline: camera.baseline,
        image_t: read_image(path("image_t")?)?,
        image_t1: read_image(path("image_t1")?)?,
        image_right: read_image(path("image_right")?)?,
        depth: read_depth(path("depth")?)?,
        depth_right: read_depth(path("depth_right")?)?,
        pose,
        optical_flow: read_flo(path("optical_flow")?)?,
        backward_flow: read_flo(path("backward_flow")?)?,
        rigid_flow: read_flo(path("rigid_flow")?)?,
        moving_mask: read_mask(path("moving_mask")?)?,
        occluded: read_mask(path("occluded")?)?,
    };
    let dims = sample.image_t.dims();
    let all = [
        sample.image_t1.dims(),
        sample.image_right.dims(),
        sample.depth.dims(),
        sample.depth_right.dims(),
        sample.optical_flow.dims(),
        sample.backward_flow.dims(),
        sample.rigid_flow.dims(),
        sample.moving_mask.dims(),
        sample.occluded.dims(),
    ];
    if let Some(bad) = all.iter().find(|d| **d != dims) {
        return Err(Error::format(dir, format!("sample files disagree in size: {dims:?} vs {bad:?}")));
    }
    Ok((sample, manifest))
}
