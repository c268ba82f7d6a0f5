use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::scene::{Camera, Extrinsics, Intrinsics};

/// JSON camera: intrinsics in pixels, world-to-camera extrinsics in meters
/// as a row-major 4x4 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    pub extrinsics: [[f64; 4]; 4],
}

impl CameraFile {
    pub fn from_camera(c: &Camera) -> Self {
        let e = c.extrinsics.matrix();
        Self {
            fx: c.intrinsics.fx,
            fy: c.intrinsics.fy,
            cx: c.intrinsics.cx,
            cy: c.intrinsics.cy,
            width: Some(c.width),
            height: Some(c.height),
            extrinsics: std::array::from_fn(|r| std::array::from_fn(|col| e[(r, col)])),
        }
    }

    /// `size` fills in a missing width/height; the file's own values win.
    pub fn to_camera(&self, size: Option<(usize, usize)>) -> std::result::Result<Camera, String> {
        let (width, height) = match (self.width, self.height, size) {
            (Some(w), Some(h), _) => (w, h),
            (_, _, Some(s)) => s,
            _ => return Err("camera has no width/height and none was given".into()),
        };
        if width == 0 || height == 0 {
            return Err(format!("image size must be positive, got {width}x{height}"));
        }
        let k = [self.fx, self.fy, self.cx, self.cy];
        if !k.iter().all(|v| v.is_finite()) || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(format!("focal lengths must be finite and > 0, got {} and {}", self.fx, self.fy));
        }
        let m = Matrix4::from_fn(|r, c| self.extrinsics[r][c]);
        let extrinsics = Extrinsics::new(m).map_err(|e| e.to_string())?;
        Ok(Camera::new(Intrinsics::new(self.fx, self.fy, self.cx, self.cy), extrinsics, width, height))
    }
}

pub fn read_camera(path: &Path, size: Option<(usize, usize)>) -> Result<Camera> {
    let file: CameraFile = serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    file.to_camera(size).map_err(|m| Error::format(path, m))
}

pub fn write_camera(path: &Path, camera: &Camera) -> Result<()> {
    let text = serde_json::to_string_pretty(&CameraFile::from_camera(camera)).expect("plain numbers");
    write_atomic(path, text.as_bytes())
}
