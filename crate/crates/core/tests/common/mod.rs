#![allow(dead_code)]

pub mod oracle;

use layersplat::render::Viewport;
use layersplat::{Camera, ComposedProjection, Extrinsics, Gaussian, GaussianSet, Intrinsics};
use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn set_of(gaussians: Vec<Gaussian>) -> GaussianSet {
    GaussianSet {
        grid_w: gaussians.len().div_ceil(2),
        grid_h: 1,
        scale_max: 1.0,
        gaussians,
    }
}

/// Source camera looking down +z and a target a few centimeters away.
pub fn random_views(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (Camera, Camera) {
    let k = Intrinsics::new(w as f64 * 1.1, h as f64 * 1.05, w as f64 * 0.5, h as f64 * 0.5);
    let src = Camera::new(k, Extrinsics::identity(), w, h);
    let rot = Rotation3::from_euler_angles(
        rng.random_range(-0.04..0.04),
        rng.random_range(-0.04..0.04),
        rng.random_range(-0.04..0.04),
    );
    let center = Vector3::from_fn(|_, _| rng.random_range(-0.08..0.08));
    let tgt = Camera::new(k, Extrinsics::looking_from(rot.into_inner(), center).unwrap(), w, h);
    (src, tgt)
}

/// Fuzzed normalized-space Gaussians with distinct depths and footprints of
/// a few pixels, viewed from a nearby camera.
pub fn random_scene(rng: &mut ChaCha8Rng, n: usize, w: usize, h: usize) -> (GaussianSet, ComposedProjection, Viewport) {
    let (src, tgt) = random_views(rng, w, h);
    let proj = ComposedProjection::for_views(&src, &tgt).unwrap();
    (random_gaussians(rng, n, w, 0.7), proj, Viewport::new(w, h))
}

pub fn random_gaussians(rng: &mut ChaCha8Rng, n: usize, w: usize, max_opacity: f64) -> GaussianSet {
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(rng);
    let gaussians = slots
        .into_iter()
        .map(|slot| {
            let z = 1.0 + 3.0 * (slot as f64 + rng.random_range(0.2..0.8)) / n as f64;
            let u = rng.random_range(-1.1..1.1);
            let v = rng.random_range(-1.1..1.1);
            let radius_px = rng.random_range(1.0..4.0);
            let s = radius_px * z / (1.1 * w as f64);
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            let norm = rng.random_range(0.6..1.4);
            Gaussian {
                position: Vector3::new(u * z, v * z, z),
                scale: Vector3::new(
                    s * rng.random_range(0.5..2.0),
                    s * rng.random_range(0.5..2.0),
                    s * rng.random_range(0.5..2.0),
                ),
                rotation: q.map(|x| norm * x / n),
                color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
                opacity: rng.random_range(0.05..max_opacity),
            }
        })
        .collect();
    set_of(gaussians)
}

/// Relative error with the `max(|a|, |b|, 1e-6)` denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite difference of `f` along coordinate `k` of `x`, step relative to `|x_k|`.
pub fn central_diff(x: &[f64], k: usize, rel_step: f64, floor: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let h = rel_step * x[k].abs().max(floor);
    let mut p = x.to_vec();
    p[k] = x[k] + h;
    let fp = f(&p);
    p[k] = x[k] - h;
    let fm = f(&p);
    (fp - fm) / (2.0 * h)
}

/// Step floor per attribute slot: position, scale, quaternion, color, opacity.
pub fn attribute_floor(slot: usize) -> f64 {
    match slot {
        0..=2 => 1.0,
        3..=5 => 1e-2,
        _ => 0.1,
    }
}

pub fn flatten(set: &GaussianSet) -> Vec<f64> {
    set.gaussians.iter().flat_map(|g| g.to_array()).collect()
}

pub fn unflatten(template: &GaussianSet, x: &[f64]) -> GaussianSet {
    let gaussians = x
        .chunks(14)
        .map(|c| Gaussian::from_array(c.try_into().unwrap()))
        .collect();
    GaussianSet {
        gaussians,
        ..template.clone()
    }
}
