//! Finite-difference checks of every analytic gradient. Each returns the
//! worst relative error over all checked coordinates.

use layersplat::depth::FrustumMask;
use layersplat::losses::{self, LossWeights, PyramidExtractor};
use layersplat::render::{render, Frame, RenderGrad, Viewport};
use layersplat::{ComposedProjection, DeltaSet, GaussianSet, GrayImage, ImageRgb, LayeredDepthMap, RenderOutput, ScaleMap};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{attribute_floor, central_diff, flatten, rel_err, unflatten};

const STEP: f64 = 1e-4;

fn worst(x: &[f64], analytic: &[f64], floor: impl Fn(usize) -> f64, f: impl FnMut(&[f64]) -> f64) -> f64 {
    worst_with_step(STEP, x, analytic, floor, f)
}

fn worst_with_step(
    step: f64,
    x: &[f64],
    analytic: &[f64],
    floor: impl Fn(usize) -> f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut m: f64 = 0.0;
    for k in 0..x.len() {
        let fd = central_diff(x, k, step, floor(k), &mut f);
        m = m.max(rel_err(analytic[k], fd));
    }
    m
}

fn rgb_flat(img: &ImageRgb) -> Vec<f64> {
    img.data.iter().flatten().copied().collect()
}

fn rgb_from(template: &ImageRgb, x: &[f64]) -> ImageRgb {
    ImageRgb {
        data: x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        ..template.clone()
    }
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageRgb {
    ImageRgb::from_fn(w, h, |_, _| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> FrustumMask {
    FrustumMask {
        width: w,
        height: h,
        values: (0..w * h).map(|_| rng.random_bool(0.7)).collect(),
    }
}

fn contract(out: &RenderOutput, up: &RenderGrad) -> f64 {
    let mut s = 0.0;
    for (c, g) in out.color.data.iter().zip(&up.color) {
        s += c[0] * g[0] + c[1] * g[1] + c[2] * g[2];
    }
    s += out.alpha.data.iter().zip(&up.alpha).map(|(a, b)| a * b).sum::<f64>();
    s + out.inv_depth.data.iter().zip(&up.inv_depth).map(|(a, b)| a * b).sum::<f64>()
}

pub fn render_backward(rng: &mut ChaCha8Rng, set: &GaussianSet, proj: &ComposedProjection, vp: Viewport) -> f64 {
    let n = vp.pixels();
    let up = RenderGrad {
        color: (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
        alpha: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        inv_depth: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let grads = Frame::new(set, proj, vp).backward(&up);
    let analytic: Vec<f64> = grads.gaussians.iter().flat_map(|g| g.to_array()).collect();
    worst(&flatten(set), &analytic, |k| attribute_floor(k % 14), |x| {
        contract(&render(&unflatten(set, x), proj, vp), &up)
    })
}

/// Target differing from `pred` by at least 0.01 per channel, so no
/// finite-difference stencil straddles the L1 kink.
fn offset_image(rng: &mut ChaCha8Rng, pred: &ImageRgb) -> ImageRgb {
    ImageRgb {
        data: pred
            .data
            .iter()
            .map(|p| p.map(|v| away_from(rng, v, 0.0, 1.0)))
            .collect(),
        ..pred.clone()
    }
}

/// A value in `[lo, hi]` at distance 0.01..0.3 from `v`.
fn away_from(rng: &mut ChaCha8Rng, v: f64, lo: f64, hi: f64) -> f64 {
    let d = rng.random_range(0.01..0.3);
    let up = v + d <= hi && (v - d < lo || rng.random_bool(0.5));
    if up {
        v + d
    } else {
        v - d
    }
}

/// Sum of a signed monotone profile per axis plus small noise: every
/// forward difference, at every pooling level, stays clear of zero.
fn kink_free_field(rng: &mut ChaCha8Rng, w: usize, h: usize, offset: f64) -> Vec<f64> {
    graded_field(rng, w, h, offset, 0.05..0.2, 0.005)
}

/// Like [`kink_free_field`] with explicit step range and noise amplitude.
fn graded_field(
    rng: &mut ChaCha8Rng,
    w: usize,
    h: usize,
    offset: f64,
    steps: std::ops::Range<f64>,
    noise: f64,
) -> Vec<f64> {
    let mut profile = |n: usize| {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut acc = 0.0;
        (0..n)
            .map(|_| {
                acc += sign * rng.random_range(steps.clone());
                acc
            })
            .collect::<Vec<f64>>()
    };
    let (a, b) = (profile(w), profile(h));
    let mean = (a.iter().sum::<f64>() / w as f64) + (b.iter().sum::<f64>() / h as f64);
    (0..w * h)
        .map(|i| offset + a[i % w] + b[i / w] - mean + rng.random_range(-noise..noise))
        .collect()
}

pub fn color(rng: &mut ChaCha8Rng, w: usize, h: usize) -> f64 {
    let (pi, pn) = (random_image(rng, w, h), random_image(rng, w, h));
    let (ti, tn) = (offset_image(rng, &pi), offset_image(rng, &pn));
    let m = random_mask(rng, w, h);
    let g = losses::color_loss(&pi, &ti, &[(&pn, &tn, &m)]).unwrap();
    let mut x = rgb_flat(&pi);
    x.extend(rgb_flat(&pn));
    let mut analytic: Vec<f64> = g.input.iter().flatten().copied().collect();
    analytic.extend(g.novel[0].iter().flatten());
    let half = w * h * 3;
    worst(&x, &analytic, |_| 1.0, |x| {
        let a = rgb_from(&pi, &x[..half]);
        let b = rgb_from(&pn, &x[half..]);
        losses::color_loss(&a, &ti, &[(&b, &tn, &m)]).unwrap().value
    })
}

pub fn alpha(rng: &mut ChaCha8Rng, w: usize, h: usize) -> f64 {
    let a = GrayImage::from_fn(w, h, |_, _| rng.random_range(0.05..1.0));
    let b = GrayImage::from_fn(w, h, |_, _| rng.random_range(0.05..1.0));
    let m = random_mask(rng, w, h);
    let g = losses::alpha_loss(&a, &[(&b, &m)]).unwrap();
    let mut x = a.data.clone();
    x.extend(&b.data);
    let mut analytic = g.input.clone();
    analytic.extend(&g.novel[0]);
    let n = w * h;
    worst(&x, &analytic, |_| 1.0, |x| {
        let a2 = GrayImage {
            data: x[..n].to_vec(),
            ..a.clone()
        };
        let b2 = GrayImage {
            data: x[n..].to_vec(),
            ..b.clone()
        };
        losses::alpha_loss(&a2, &[(&b2, &m)]).unwrap().value
    })
}

pub fn perceptual(rng: &mut ChaCha8Rng, w: usize, h: usize) -> f64 {
    let (p, t) = (random_image(rng, w, h), random_image(rng, w, h));
    let m = random_mask(rng, w, h);
    let ex = PyramidExtractor::default();
    let (_, g) = losses::perceptual_loss(&p, &t, Some(&m), &ex).unwrap();
    let analytic: Vec<f64> = g.iter().flatten().copied().collect();
    worst(&rgb_flat(&p), &analytic, |_| 1.0, |x| {
        losses::perceptual_loss(&rgb_from(&p, x), &t, Some(&m), &ex).unwrap().0
    })
}

fn random_depth(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.8..5.0)).collect()
}

pub fn depth(rng: &mut ChaCha8Rng, w: usize, h: usize) -> f64 {
    let d = random_depth(rng, w * h);
    let gt: Vec<f64> = d.iter().map(|v| 1.0 / away_from(rng, 1.0 / v, 0.1, 2.0)).collect();
    let (_, g) = losses::depth_loss(&d, &gt).unwrap();
    worst(&d, &g, |_| 1.0, |x| losses::depth_loss(x, &gt).unwrap().0)
}

pub fn tv(rng: &mut ChaCha8Rng, w: usize, h: usize) -> f64 {
    let d = kink_free_field(rng, w, h, 6.0);
    let (_, g) = losses::tv_second_layer(&d, w, h).unwrap();
    worst(&d, &g, |_| 1.0, |x| losses::tv_second_layer(x, w, h).unwrap().0)
}

/// Base grid of `gw x gh` cells over a `2gw x 2gh` depth map; perturbs the
/// composed opacities and both adjusted layers. Layer 1 disparity is steep
/// everywhere and layer 2 flat, so each pixel sits clearly on one side of
/// the ε hinge.
pub fn floater(rng: &mut ChaCha8Rng, gw: usize, gh: usize) -> f64 {
    let (w, h) = (2 * gw, 2 * gh);
    let to_depth = |inv: Vec<f64>| inv.into_iter().map(|v| 1.0 / v).collect::<Vec<f64>>();
    let first = to_depth(graded_field(rng, w, h, 2.5, 0.03..0.08, 0.004));
    let second = to_depth(graded_field(rng, w, h, 0.2, 0.0005..0.002, 0.0005));
    let depth = LayeredDepthMap::new(w, h, first.clone(), second).unwrap();
    let image = ImageRgb::filled(w, h, [0.5; 3]);
    let (img_small, depth_small) = layersplat::initializer::downsample(&image, &depth, 2).unwrap();
    let base = layersplat::init_gaussians(&img_small, &depth_small, &Default::default()).unwrap();
    let mut composed = base.clone();
    for g in &mut composed.gaussians {
        g.opacity = rng.random_range(0.05..0.95);
    }
    let weights = LossWeights::default();
    let t = losses::floater_grad_reg(&base, &composed, &depth, &weights).unwrap();

    let n = composed.gaussians.len();
    let mut x: Vec<f64> = composed.gaussians.iter().map(|g| g.opacity).collect();
    x.extend(&depth.layers[0]);
    x.extend(&depth.layers[1]);
    let mut analytic = t.d_opacity.clone();
    analytic.extend(&t.d_depth[0]);
    analytic.extend(&t.d_depth[1]);
    let px = w * h;
    // the σ = 1e-2 falloff is sharply curved and neighboring samples pull in
    // opposite directions; a finer step keeps truncation error clear of the
    // tolerance
    worst_with_step(1e-6, &x, &analytic, |_| 1.0, |x| {
        let mut c = composed.clone();
        for (g, o) in c.gaussians.iter_mut().zip(&x[..n]) {
            g.opacity = *o;
        }
        let d = LayeredDepthMap::new(w, h, x[n..n + px].to_vec(), x[n + px..].to_vec()).unwrap();
        losses::floater_grad_reg(&base, &c, &d, &weights).unwrap().value
    })
}

pub fn delta(rng: &mut ChaCha8Rng, set: &GaussianSet) -> f64 {
    let mut d = DeltaSet::zeros_like(set);
    for g in &mut d.values {
        g.position.x = rng.random_range(-800.0..800.0);
        g.position.y = rng.random_range(-800.0..800.0);
    }
    let (_, g) = losses::delta_reg(&d, 400.0);
    let x: Vec<f64> = d.values.iter().flat_map(|v| [v.position.x, v.position.y]).collect();
    let analytic: Vec<f64> = g.iter().flat_map(|v| [v.position.x, v.position.y]).collect();
    worst(&x, &analytic, |_| 1.0, |x| {
        let mut d2 = d.clone();
        for (v, p) in d2.values.iter_mut().zip(x.chunks(2)) {
            v.position.x = p[0];
            v.position.y = p[1];
        }
        losses::delta_reg(&d2, 400.0).0
    })
}

/// Inflates a third of the scene so some splats exceed the variance bound.
pub fn splat(rng: &mut ChaCha8Rng, set: &GaussianSet, proj: &ComposedProjection, vp: Viewport) -> f64 {
    let mut set = set.clone();
    for g in set.gaussians.iter_mut().step_by(3) {
        g.scale *= rng.random_range(3.0..6.0);
    }
    let weights = LossWeights::default();
    let frame = Frame::new(&set, proj, vp);
    let (_, sg) = losses::splat_size_reg(&frame, &weights);
    let analytic: Vec<f64> = frame.splat_backward(&sg).gaussians.iter().flat_map(|g| g.to_array()).collect();
    worst(&flatten(&set), &analytic, |k| attribute_floor(k % 14), |x| {
        losses::splat_size_reg(&Frame::new(&unflatten(&set, x), proj, vp), &weights).0
    })
}

pub fn scale(rng: &mut ChaCha8Rng, w: usize, h: usize) -> f64 {
    let s = ScaleMap {
        width: w,
        height: h,
        log_scale: kink_free_field(rng, w, h, 0.0)
            .into_iter()
            .map(|u| if u.abs() < 0.01 { u + 0.02f64.copysign(u) } else { u })
            .collect(),
    };
    let r = losses::scale_map_regs(&s);
    let with = |x: &[f64]| ScaleMap {
        log_scale: x.to_vec(),
        ..s.clone()
    };
    let a = worst(&s.log_scale, &r.d_scale, |_| 1.0, |x| losses::scale_map_regs(&with(x)).scale);
    let b = worst(&s.log_scale, &r.d_grad_scale, |_| 1.0, |x| losses::scale_map_regs(&with(x)).grad_scale);
    a.max(b)
}
