//! On-disk formats: splat files, cameras, depth and image files, view
//! manifests, loss weights and the viewer bundle.

mod camera_file;
mod images;
mod manifest;
mod pfm;
mod splat_file;
mod viewer;

pub use camera_file::{read_camera, write_camera, CameraFile};
pub use images::{
    read_depth, read_rgb, write_depth_mm_png, write_gray_png, write_inv_depth_png, write_rgb_png, InvDepthEncoding,
};
pub use manifest::{Manifest, Role, ViewEntry};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use splat_file::{SplatFile, HEADER_LEN, MAGIC, RECORD_LEN, VERSION};
pub use viewer::{export_viewer, ViewerManifest, HEADBOX_RADIUS_M, MANIFEST_NAME, SPLAT_NAME};

use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<LossWeights> {
    let weights: LossWeights = toml::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    weights.check()?;
    Ok(weights)
}

pub fn weights_to_toml(weights: &LossWeights) -> String {
    toml::to_string(weights).expect("flat struct of floats")
}

pub fn write_weights(path: &Path, weights: &LossWeights) -> Result<()> {
    write_atomic(path, weights_to_toml(weights).as_bytes())
}
