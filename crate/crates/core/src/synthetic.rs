//! Analytic two-plane scene with exact images and depth from any camera.

use nalgebra::{Matrix3, Vector3};

use crate::error::Result;
use crate::fit::FitView;
use crate::scene::{Camera, Extrinsics, ImageRgb, Intrinsics, LayeredDepthMap};

const FOREGROUND_Z: f64 = 2.0;
const BACKGROUND_Z: f64 = 4.0;
const FOREGROUND_HALF: [f64; 2] = [0.6, 0.5];

fn foreground_color(x: f64, y: f64) -> [f64; 3] {
    [
        0.75 + 0.15 * (6.0 * x).sin(),
        0.3 + 0.2 * (5.0 * y).cos(),
        0.2 + 0.1 * (4.0 * (x + y)).sin(),
    ]
}

fn background_color(x: f64, y: f64) -> [f64; 3] {
    [
        0.2 + 0.15 * (2.5 * x).sin() * (2.0 * y).cos(),
        0.5 + 0.2 * (3.0 * y).sin(),
        0.7 + 0.15 * (2.0 * x).cos(),
    ]
}

/// A fronto-parallel textured card in front of a textured wall. World
/// coordinates coincide with the source camera's.
#[derive(Debug, Clone)]
pub struct TwoPlanes {
    pub source: Camera,
    pub image: ImageRgb,
    /// Visible depth, and the wall behind the card as the second layer.
    pub depth: LayeredDepthMap,
}

impl TwoPlanes {
    pub fn new(size: usize) -> Result<Self> {
        let f = size as f64;
        let source = Camera::new(
            Intrinsics::new(f, f, f / 2.0, f / 2.0),
            Extrinsics::identity(),
            size,
            size,
        );
        let (image, first) = trace(&source);
        let depth = LayeredDepthMap::new(size, size, first, vec![BACKGROUND_Z; size * size])?;
        Ok(Self { source, image, depth })
    }

    /// Source intrinsics, camera centered at `center` with no rotation.
    pub fn camera_at(&self, center: Vector3<f64>) -> Camera {
        let extrinsics = Extrinsics::looking_from(Matrix3::identity(), center).expect("identity rotation");
        Camera {
            extrinsics,
            ..self.source
        }
    }

    /// Exact image and depth from `camera`.
    pub fn view(&self, camera: &Camera) -> FitView {
        let (target, depth) = trace(camera);
        FitView {
            camera: *camera,
            target,
            depth: Some(depth),
        }
    }
}

/// Casts one ray per pixel center; depth is along the optical axis.
fn trace(camera: &Camera) -> (ImageRgb, Vec<f64>) {
    let (w, h) = (camera.width, camera.height);
    let k = camera.intrinsics;
    let to_world = camera.extrinsics.rotation().transpose();
    let origin = camera.extrinsics.center();
    let mut image = ImageRgb::new(w, h);
    let mut depth = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let d_cam = Vector3::new((c as f64 + 0.5 - k.cx) / k.fx, (r as f64 + 0.5 - k.cy) / k.fy, 1.0);
            let d = to_world * d_cam;
            let hit = |z: f64| {
                let t = (z - origin.z) / d.z;
                (t, origin + d * t)
            };
            let (t, p) = hit(FOREGROUND_Z);
            let (t, color) = if t > 0.0 && p.x.abs() <= FOREGROUND_HALF[0] && p.y.abs() <= FOREGROUND_HALF[1] {
                (t, foreground_color(p.x, p.y))
            } else {
                let (t, p) = hit(BACKGROUND_Z);
                (t, background_color(p.x, p.y))
            };
            image.set(c, r, color);
            depth[r * w + c] = t;
        }
    }
    (image, depth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_view_matches_construction() {
        let s = TwoPlanes::new(64).unwrap();
        // card spans columns 13..=51 at depth 2
        assert_eq!(s.depth.get(0, 32, 32), FOREGROUND_Z);
        assert_eq!(s.depth.get(0, 2, 32), BACKGROUND_Z);
        assert_eq!(s.depth.get(1, 32, 32), BACKGROUND_Z);
        let v = s.view(&s.source);
        assert_eq!(v.target, s.image);
    }

    #[test]
    fn sideways_camera_shifts_card_by_disparity() {
        let s = TwoPlanes::new(64).unwrap();
        let v = s.view(&s.camera_at(Vector3::new(0.25, 0.0, 0.0)));
        // disparity at the card is f·b/z = 8 px
        let (a, b) = (v.target.get(20, 30), s.image.get(28, 30));
        assert!((0..3).all(|c| (a[c] - b[c]).abs() < 1e-12));
    }
}
