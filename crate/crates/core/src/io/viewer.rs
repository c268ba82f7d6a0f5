use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, CameraFile, SplatFile};
use crate::error::{Error, Result};

/// Default radius of comfortable head motion around the source camera.
pub const HEADBOX_RADIUS_M: f64 = 0.5;

pub const SPLAT_NAME: &str = "scene.shrp";
pub const MANIFEST_NAME: &str = "manifest.json";

/// `manifest.json` of a viewer bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewerManifest {
    pub splat: String,
    pub format_version: u16,
    pub count: u64,
    pub camera: CameraFile,
    /// Headbox center in world coordinates (the source camera center).
    pub headbox_center: [f64; 3],
    pub headbox_radius_m: f64,
}

/// Writes `scene.shrp` and `manifest.json` into `dir`, creating it if needed.
pub fn export_viewer(splat: &SplatFile, dir: &Path) -> Result<ViewerManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    splat.write(&dir.join(SPLAT_NAME))?;
    let c = splat.camera.extrinsics.center();
    let manifest = ViewerManifest {
        splat: SPLAT_NAME.into(),
        format_version: super::VERSION,
        count: splat.set.gaussians.len() as u64,
        camera: CameraFile::from_camera(&splat.camera),
        headbox_center: [c.x, c.y, c.z],
        headbox_radius_m: HEADBOX_RADIUS_M,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("plain data");
    text.push('\n');
    write_atomic(&dir.join(MANIFEST_NAME), text.as_bytes())?;
    Ok(manifest)
}
