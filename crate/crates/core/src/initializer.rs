//! Base Gaussians from an image and an adjusted two-layer depth map.
//!
//! The image is average-pooled and each depth layer min-pooled; every cell
//! then becomes one Gaussian per layer, unprojected in normalized image
//! coordinates without any camera intrinsics.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{check_positive_depth, Gaussian, GaussianSet, ImageRgb, LayeredDepthMap, LAYERS};

/// Opacity of freshly initialized Gaussians.
pub const INITIAL_OPACITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Base scale factor; `None` picks `1.5 / max(grid_w, grid_h)`.
    pub s0: Option<f64>,
    pub downsample_factor: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            s0: None,
            downsample_factor: 2,
        }
    }
}

impl InitConfig {
    pub fn s0_for(&self, grid_w: usize, grid_h: usize) -> f64 {
        self.s0
            .unwrap_or_else(|| 1.5 / grid_w.max(grid_h).max(1) as f64)
    }

    pub fn check(&self) -> Result<()> {
        if let Some(s0) = self.s0 {
            if !(s0.is_finite() && s0 > 0.0) {
                return Err(Error::InvalidConfig(format!("s0 must be > 0, got {s0}")));
            }
        }
        if self.downsample_factor == 0 {
            return Err(Error::InvalidConfig("downsample factor must be >= 1".into()));
        }
        Ok(())
    }
}

/// Center of pixel `index` of an axis with `extent` pixels, mapped to `[-1, 1]`.
#[inline]
pub fn normalized_coord(index: usize, extent: usize) -> f64 {
    (index as f64 + 0.5) / extent as f64 * 2.0 - 1.0
}

fn check_divisible(width: usize, height: usize, factor: usize) -> Result<()> {
    if factor == 0 || width % factor != 0 || height % factor != 0 {
        return Err(Error::NotDivisible { width, height, factor });
    }
    Ok(())
}

/// Non-overlapping average pooling.
pub fn average_pool(image: &ImageRgb, factor: usize) -> Result<ImageRgb> {
    check_divisible(image.width, image.height, factor)?;
    let (w, h) = (image.width / factor, image.height / factor);
    let norm = 1.0 / (factor * factor) as f64;
    Ok(ImageRgb::from_fn(w, h, |col, row| {
        let mut acc = [0.0; 3];
        for dy in 0..factor {
            for dx in 0..factor {
                let p = image.get(col * factor + dx, row * factor + dy);
                for c in 0..3 {
                    acc[c] += p[c];
                }
            }
        }
        acc.map(|v| v * norm)
    }))
}

/// Non-overlapping min pooling of one channel. Also returns, for each output
/// cell, the flat input index that supplied the minimum (first in raster
/// order on ties).
pub fn min_pool(values: &[f64], width: usize, height: usize, factor: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    check_divisible(width, height, factor)?;
    let (w, h) = (width / factor, height / factor);
    let mut out = Vec::with_capacity(w * h);
    let mut argmin = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let mut best = f64::INFINITY;
            let mut best_idx = (row * factor) * width + col * factor;
            for dy in 0..factor {
                for dx in 0..factor {
                    let idx = (row * factor + dy) * width + col * factor + dx;
                    if values[idx] < best {
                        best = values[idx];
                        best_idx = idx;
                    }
                }
            }
            out.push(best);
            argmin.push(best_idx);
        }
    }
    Ok((out, argmin))
}

/// Average-pools the image and min-pools each depth layer by `factor`.
pub fn downsample(image: &ImageRgb, depth: &LayeredDepthMap, factor: usize) -> Result<(ImageRgb, LayeredDepthMap)> {
    if !image.same_dims(depth) {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, depth is {}x{}",
            image.width, image.height, depth.width, depth.height
        )));
    }
    let (pooled, _) = downsample_depth(depth, factor)?;
    Ok((average_pool(image, factor)?, pooled))
}

/// Min-pooled depth plus the argmin indices per layer, for routing gradients.
pub fn downsample_depth(depth: &LayeredDepthMap, factor: usize) -> Result<(LayeredDepthMap, [Vec<usize>; LAYERS])> {
    let (a, ia) = min_pool(&depth.layers[0], depth.width, depth.height, factor)?;
    let (b, ib) = min_pool(&depth.layers[1], depth.width, depth.height, factor)?;
    Ok((
        LayeredDepthMap {
            width: depth.width / factor,
            height: depth.height / factor,
            layers: [a, b],
        },
        [ia, ib],
    ))
}

/// Builds the base set: position `[u·d, v·d, d]`, isotropic scale `s0·d`,
/// identity rotation, color from the pooled image on both layers, opacity 0.5.
pub fn init_gaussians(image: &ImageRgb, depth: &LayeredDepthMap, cfg: &InitConfig) -> Result<GaussianSet> {
    cfg.check()?;
    if !image.same_dims(depth) {
        return Err(Error::DimensionMismatch(format!(
            "downsampled image is {}x{}, depth is {}x{}",
            image.width, image.height, depth.width, depth.height
        )));
    }
    check_positive_depth(depth.layers.iter().flatten().copied())?;
    let (w, h) = (image.width, image.height);
    let s0 = cfg.s0_for(w, h);
    let mut gaussians = Vec::with_capacity(LAYERS * w * h);
    for layer in 0..LAYERS {
        for row in 0..h {
            let v = normalized_coord(row, h);
            for col in 0..w {
                let u = normalized_coord(col, w);
                let d = depth.get(layer, col, row);
                gaussians.push(Gaussian {
                    position: Vector3::new(u * d, v * d, d),
                    scale: Vector3::repeat(s0 * d),
                    rotation: [1.0, 0.0, 0.0, 0.0],
                    color: image.get(col, row),
                    opacity: INITIAL_OPACITY,
                });
            }
        }
    }
    let max_scale = gaussians.iter().map(|g| g.scale.x).fold(0.0, f64::max);
    Ok(GaussianSet {
        grid_w: w,
        grid_h: h,
        scale_max: 2.0 * max_scale,
        gaussians,
    })
}

/// Gradient of a loss w.r.t. the pooled depth, given its gradient w.r.t. the
/// base set's positions and scales. Layer-major, same layout as the set.
pub fn init_backward(base: &GaussianSet, s0: f64, d_base: &[Gaussian]) -> Vec<f64> {
    base.gaussians
        .iter()
        .zip(d_base)
        .map(|(g, d)| {
            let z = g.position.z;
            let (u, v) = (g.position.x / z, g.position.y / z);
            u * d.position.x + v * d.position.y + d.position.z + s0 * d.scale.sum()
        })
        .collect()
}
