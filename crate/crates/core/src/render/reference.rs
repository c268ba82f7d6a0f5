//! Brute-force rasterizer: every pixel visits every splat. Used as the
//! equivalence oracle for the tiled path.

use crate::camera::ComposedProjection;
use crate::scene::{GaussianSet, GrayImage, ImageRgb, RenderOutput};

use super::{evaluate, project_gaussian, PixelSum, Viewport};

pub fn render_reference(scene: &GaussianSet, proj: &ComposedProjection, viewport: Viewport) -> RenderOutput {
    let mut splats: Vec<_> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, proj, i))
        .map(|p| p.splat)
        .collect();
    splats.sort_by(|a, b| {
        a.view_depth
            .total_cmp(&b.view_depth)
            .then(a.source_index.cmp(&b.source_index))
    });

    let (w, h) = (viewport.width, viewport.height);
    let mut color = ImageRgb::new(w, h);
    let mut alpha = GrayImage::new(w, h);
    let mut inv_depth = GrayImage::new(w, h);
    for row in 0..h {
        for col in 0..w {
            let mut sum = PixelSum::new();
            for s in &splats {
                if let Some(hit) = evaluate(s, col as f64 + 0.5, row as f64 + 0.5) {
                    if !sum.add(s, hit.alpha) {
                        break;
                    }
                }
            }
            let i = row * w + col;
            color.data[i] = sum.color;
            alpha.data[i] = sum.alpha();
            inv_depth.data[i] = sum.normalized_inv_depth();
        }
    }
    RenderOutput {
        color,
        alpha,
        inv_depth,
        rendered: splats.len(),
        culled: scene.gaussians.len() - splats.len(),
    }
}
