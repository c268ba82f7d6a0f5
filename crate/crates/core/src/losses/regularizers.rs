use crate::error::{Error, Result};
use crate::render::{max_eigen, Frame, SplatGrad};
use crate::scene::{check_positive_depth, DeltaSet, Gaussian, GaussianSet, LayeredDepthMap, ScaleMap, LAYERS};

use super::LossWeights;

pub const SCALE_PYRAMID_LEVELS: usize = 6;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean `|1/D̄₁ − 1/D_gt|`; gradient w.r.t. `adjusted_first`.
pub fn depth_loss(adjusted_first: &[f64], ground_truth: &[f64]) -> Result<(f64, Vec<f64>)> {
    if adjusted_first.len() != ground_truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "depth {} vs ground truth {} values",
            adjusted_first.len(),
            ground_truth.len()
        )));
    }
    check_positive_depth(adjusted_first.iter().copied())?;
    check_positive_depth(ground_truth.iter().copied())?;
    let n = adjusted_first.len().max(1) as f64;
    let mut sum = 0.0;
    let grad = adjusted_first
        .iter()
        .zip(ground_truth)
        .map(|(d, g)| {
            let r = 1.0 / d - 1.0 / g;
            sum += r.abs();
            -sign(r) / (d * d * n)
        })
        .collect();
    Ok((sum / n, grad))
}

/// `mean|∇x v| + mean|∇y v|` with forward differences; each mean runs over
/// the entries where its difference exists.
pub fn total_variation(v: &[f64], width: usize, height: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; v.len()];
    let mut value = 0.0;
    if width > 1 {
        let n = ((width - 1) * height) as f64;
        for r in 0..height {
            for c in 0..width - 1 {
                let i = r * width + c;
                let d = v[i + 1] - v[i];
                value += d.abs() / n;
                grad[i + 1] += sign(d) / n;
                grad[i] -= sign(d) / n;
            }
        }
    }
    if height > 1 {
        let n = (width * (height - 1)) as f64;
        for r in 0..height - 1 {
            for c in 0..width {
                let i = r * width + c;
                let d = v[i + width] - v[i];
                value += d.abs() / n;
                grad[i + width] += sign(d) / n;
                grad[i] -= sign(d) / n;
            }
        }
    }
    (value, grad)
}

/// Total variation of the second layer's inverse depth; gradient w.r.t. depth.
pub fn tv_second_layer(second: &[f64], width: usize, height: usize) -> Result<(f64, Vec<f64>)> {
    if second.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "second layer has {} values, expected {width}x{height}",
            second.len()
        )));
    }
    check_positive_depth(second.iter().copied())?;
    let inv: Vec<f64> = second.iter().map(|d| 1.0 / d).collect();
    let (value, g_inv) = total_variation(&inv, width, height);
    let grad = g_inv.iter().zip(second).map(|(g, d)| -g / (d * d)).collect();
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloaterTerm {
    pub value: f64,
    pub d_opacity: Vec<f64>,
    /// Gradient w.r.t. each adjusted depth layer.
    pub d_depth: [Vec<f64>; LAYERS],
}

/// Full-resolution pixel under a base Gaussian's normalized `(x/z, y/z)`.
fn sample_pixel(g: &Gaussian, width: usize, height: usize) -> (usize, usize) {
    let z = g.position.z;
    let px = |u: f64, extent: usize| (((u + 1.0) * 0.5 * extent as f64).floor().max(0.0) as usize).min(extent - 1);
    (px(g.position.x / z, width), px(g.position.y / z, height))
}

/// Opacity-gated penalty on steep disparity under each Gaussian:
/// `mean_i α_i (1 − exp(−max(0, |∇(1/D̄)| − ε)/σ))`, with the disparity of
/// the Gaussian's own layer sampled at its base position.
pub fn floater_grad_reg(
    base: &GaussianSet,
    composed: &GaussianSet,
    adjusted: &LayeredDepthMap,
    weights: &LossWeights,
) -> Result<FloaterTerm> {
    if base.gaussians.len() != composed.gaussians.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} base vs {} composed gaussians",
            base.gaussians.len(),
            composed.gaussians.len()
        )));
    }
    adjusted.check()?;
    let (w, h) = (adjusted.width, adjusted.height);
    let (sigma, eps) = (weights.floater_sigma, weights.floater_epsilon);
    let n = composed.gaussians.len();
    let mut term = FloaterTerm {
        value: 0.0,
        d_opacity: vec![0.0; n],
        d_depth: [vec![0.0; w * h], vec![0.0; w * h]],
    };
    if n == 0 {
        return Ok(term);
    }
    let inv = |l: usize, i: usize| 1.0 / adjusted.layers[l][i];
    for (k, (g0, g)) in base.gaussians.iter().zip(&composed.gaussians).enumerate() {
        let layer = base.cell(k).0;
        let (c, r) = sample_pixel(g0, w, h);
        let i = r * w + c;
        let dx = if c + 1 < w { inv(layer, i + 1) - inv(layer, i) } else { 0.0 };
        let dy = if r + 1 < h { inv(layer, i + w) - inv(layer, i) } else { 0.0 };
        let mag = (dx * dx + dy * dy).sqrt();
        let excess = (mag - eps).max(0.0);
        let fall = (-excess / sigma).exp();
        term.value += g.opacity * (1.0 - fall) / n as f64;
        term.d_opacity[k] = (1.0 - fall) / n as f64;
        if excess > 0.0 {
            let d_mag = g.opacity * fall / sigma / n as f64;
            let mut push = |j: usize, d_inv: f64| {
                let d = adjusted.layers[layer][j];
                term.d_depth[layer][j] += d_inv * (-1.0 / (d * d));
            };
            if c + 1 < w {
                push(i + 1, d_mag * dx / mag);
                push(i, -d_mag * dx / mag);
            }
            if r + 1 < h {
                push(i + w, d_mag * dy / mag);
                push(i, -d_mag * dy / mag);
            }
        }
    }
    Ok(term)
}

/// `mean_i max(|Δx_i| − δ, 0) + max(|Δy_i| − δ, 0)` on the normalized
/// position deltas; gradient w.r.t. the delta set.
pub fn delta_reg(delta: &DeltaSet, bound: f64) -> (f64, Vec<Gaussian>) {
    let n = delta.values.len().max(1) as f64;
    let mut value = 0.0;
    let grads = delta
        .values
        .iter()
        .map(|d| {
            let mut g = Gaussian::zeros();
            for (k, v) in [d.position.x, d.position.y].into_iter().enumerate() {
                let excess = v.abs() - bound;
                if excess > 0.0 {
                    value += excess / n;
                    g.position[k] = sign(v) / n;
                }
            }
            g
        })
        .collect();
    (value, grads)
}

/// Hinge on the largest screen-space variance of every projected splat,
/// averaged over all Gaussians (culled ones count as zero). Gradients are in
/// the frame's compositing order.
pub fn splat_size_reg(frame: &Frame, weights: &LossWeights) -> (f64, Vec<SplatGrad>) {
    let n = frame.total().max(1) as f64;
    let mut value = 0.0;
    let grads = frame
        .splats()
        .iter()
        .map(|p| {
            let (lambda, v) = max_eigen(&p.splat.cov);
            let outer = nalgebra::Matrix2::new(v[0] * v[0], v[0] * v[1], v[0] * v[1], v[1] * v[1]);
            let mut g = SplatGrad::default();
            if lambda > weights.splat_sigma_max {
                value += (lambda - weights.splat_sigma_max) / n;
                g.cov = outer / n;
            } else if lambda < weights.splat_sigma_min {
                value += (weights.splat_sigma_min - lambda) / n;
                g.cov = -outer / n;
            }
            g
        })
        .collect();
    (value, grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRegs {
    /// Mean `|u|` of the log-scale map.
    pub scale: f64,
    /// Sum over pyramid levels of the total variation of the pooled log-scale.
    pub grad_scale: f64,
    /// Pyramid levels that fit the map (at most six).
    pub levels_used: usize,
    pub d_scale: Vec<f64>,
    pub d_grad_scale: Vec<f64>,
}

/// Magnitude and multiscale smoothness penalties on the log-scale map `u`.
/// Level `k` average-pools `u` over `2^k` blocks (remainders dropped) and is
/// used while both pooled dimensions are at least one.
pub fn scale_map_regs(s: &ScaleMap) -> ScaleRegs {
    let (w, h) = (s.width, s.height);
    let u = &s.log_scale;
    let n = u.len().max(1) as f64;
    let scale = u.iter().map(|v| v.abs()).sum::<f64>() / n;
    let d_scale = u.iter().map(|v| sign(*v) / n).collect();

    let mut grad_scale = 0.0;
    let mut d_grad_scale = vec![0.0; u.len()];
    let mut levels_used = 0;
    for k in 1..=SCALE_PYRAMID_LEVELS {
        let f = 1usize << k;
        let (pw, ph) = (w / f, h / f);
        if pw == 0 || ph == 0 {
            break;
        }
        levels_used = k;
        let area = (f * f) as f64;
        let mut pooled = vec![0.0; pw * ph];
        for r in 0..ph * f {
            for c in 0..pw * f {
                pooled[(r / f) * pw + c / f] += u[r * w + c] / area;
            }
        }
        let (v, g) = total_variation(&pooled, pw, ph);
        grad_scale += v;
        for r in 0..ph * f {
            for c in 0..pw * f {
                d_grad_scale[r * w + c] += g[(r / f) * pw + c / f] / area;
            }
        }
    }
    ScaleRegs {
        scale,
        grad_scale,
        levels_used,
        d_scale,
        d_grad_scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn depth_examples() {
        assert_eq!(depth_loss(&[2.0; 4], &[2.0; 4]).unwrap().0, 0.0);
        assert!((depth_loss(&[1.0; 4], &[2.0; 4]).unwrap().0 - 0.5).abs() < 1e-15);
        assert!(depth_loss(&[1.0, -1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn tv_of_ramp_is_slope() {
        let (w, h) = (6, 4);
        let a = 0.05;
        let depth: Vec<f64> = (0..w * h).map(|i| 1.0 / (0.2 + a * (i % w) as f64)).collect();
        let (v, _) = tv_second_layer(&depth, w, h).unwrap();
        assert!((v - a).abs() < 1e-12);
        assert_eq!(tv_second_layer(&[3.0; 24], w, h).unwrap().0, 0.0);
    }

    fn one_cell_set(opacity: f64) -> GaussianSet {
        let g = Gaussian {
            position: Vector3::new(-0.5, -0.5, 1.0),
            scale: Vector3::repeat(0.1),
            rotation: [1.0, 0.0, 0.0, 0.0],
            color: [0.5; 3],
            opacity,
        };
        GaussianSet {
            grid_w: 1,
            grid_h: 1,
            scale_max: 1.0,
            gaussians: vec![g, g],
        }
    }

    #[test]
    fn floater_on_disparity_step() {
        // 4x4 map, Gaussians sample pixel (1, 1); disparity steps by 0.02 to the right
        let disp: Vec<f64> = (0..16).map(|i| if i % 4 >= 2 { 1.02 } else { 1.0 }).collect();
        let depth: Vec<f64> = disp.iter().map(|d| 1.0 / d).collect();
        let map = LayeredDepthMap::duplicated(4, 4, depth).unwrap();
        let set = one_cell_set(1.0);
        let t = floater_grad_reg(&set, &set, &map, &LossWeights::default()).unwrap();
        let expected = 1.0 - (-1.0f64).exp();
        assert!((t.value - expected).abs() < 1e-9, "{}", t.value);

        let flat = LayeredDepthMap::duplicated(4, 4, vec![2.0; 16]).unwrap();
        assert_eq!(floater_grad_reg(&set, &set, &flat, &LossWeights::default()).unwrap().value, 0.0);
        let clear = one_cell_set(0.0);
        assert_eq!(floater_grad_reg(&set, &clear, &map, &LossWeights::default()).unwrap().value, 0.0);
    }

    #[test]
    fn delta_hinge() {
        let set = one_cell_set(0.5);
        let mut d = DeltaSet::zeros_like(&set);
        assert_eq!(delta_reg(&d, 400.0).0, 0.0);
        for g in &mut d.values {
            g.position.x = 500.0;
        }
        assert_eq!(delta_reg(&d, 400.0).0, 100.0);
    }

    #[test]
    fn scale_regs_identity_and_aligned_step() {
        let id = ScaleMap::identity(128, 64);
        let r = scale_map_regs(&id);
        assert_eq!((r.scale, r.grad_scale, r.levels_used), (0.0, 0.0, 6));

        // u = 1 on the right half of a 128x64 map: at level k the pooled map
        // is (128/2^k) x (64/2^k) with one unit step between two columns
        let u: Vec<f64> = (0..128 * 64).map(|i| if i % 128 >= 64 { 1.0 } else { 0.0 }).collect();
        let s = ScaleMap {
            width: 128,
            height: 64,
            log_scale: u,
        };
        let r = scale_map_regs(&s);
        let expected: f64 = (1..=6).map(|k| 1.0 / ((128 >> k) - 1) as f64).sum();
        assert!((r.grad_scale - expected).abs() < 1e-12);
        assert!((r.scale - 0.5).abs() < 1e-15);

        let small = scale_map_regs(&ScaleMap::identity(20, 9));
        assert_eq!(small.levels_used, 3);
    }
}
