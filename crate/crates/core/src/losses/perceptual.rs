//! Feature-matching and Gram-matrix loss over a pluggable feature extractor.

use crate::depth::FrustumMask;
use crate::error::{Error, Result};
use crate::scene::ImageRgb;

pub const PERCEPTUAL_LEVELS: usize = 4;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// `depth` channels of `width x height`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub depth: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(depth: usize, width: usize, height: usize) -> Self {
        Self {
            depth,
            width,
            height,
            data: vec![0.0; depth * width * height],
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, d: usize) -> &[f64] {
        let p = self.pixels();
        &self.data[d * p..(d + 1) * p]
    }

    pub fn channel_mut(&mut self, d: usize) -> &mut [f64] {
        let p = self.pixels();
        &mut self.data[d * p..(d + 1) * p]
    }
}

pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, image: &ImageRgb) -> Vec<FeatureMap>;

    /// Pulls feature-space gradients back to the image.
    fn extract_vjp(&self, image: &ImageRgb, grads: &[FeatureMap]) -> Vec<[f64; 3]>;
}

/// Luminance pyramid (2x average pooling, odd edges dropped) with forward
/// differences along x and y at every level: three channels per level.
#[derive(Debug, Clone, Copy)]
pub struct PyramidExtractor {
    pub levels: usize,
}

impl Default for PyramidExtractor {
    fn default() -> Self {
        Self {
            levels: PERCEPTUAL_LEVELS,
        }
    }
}

fn pool2(v: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (pw, ph) = (w / 2, h / 2);
    let mut out = vec![0.0; pw * ph];
    for r in 0..ph {
        for c in 0..pw {
            let a = 2 * r * w + 2 * c;
            out[r * pw + c] = 0.25 * (v[a] + v[a + 1] + v[a + w] + v[a + w + 1]);
        }
    }
    (out, pw, ph)
}

impl PyramidExtractor {
    fn luminance_levels(&self, image: &ImageRgb) -> Vec<(Vec<f64>, usize, usize)> {
        let lum: Vec<f64> = image
            .data
            .iter()
            .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
            .collect();
        let mut levels = vec![(lum, image.width, image.height)];
        for _ in 1..self.levels {
            let (v, w, h) = levels.last().unwrap();
            let next = pool2(v, *w, *h);
            levels.push(next);
        }
        levels
    }
}

impl FeatureExtractor for PyramidExtractor {
    fn extract(&self, image: &ImageRgb) -> Vec<FeatureMap> {
        self.luminance_levels(image)
            .into_iter()
            .map(|(lum, w, h)| {
                let mut f = FeatureMap::zeros(3, w, h);
                for r in 0..h {
                    for c in 0..w {
                        let i = r * w + c;
                        f.data[i] = lum[i];
                        if c + 1 < w {
                            f.data[w * h + i] = lum[i + 1] - lum[i];
                        }
                        if r + 1 < h {
                            f.data[2 * w * h + i] = lum[i + w] - lum[i];
                        }
                    }
                }
                f
            })
            .collect()
    }

    fn extract_vjp(&self, image: &ImageRgb, grads: &[FeatureMap]) -> Vec<[f64; 3]> {
        // coarse to fine: each level's luminance gradient, plus the
        // un-pooled gradient of the next coarser level
        let mut carry: Vec<f64> = Vec::new();
        let mut carry_dims = (0, 0);
        for g in grads.iter().rev() {
            let (w, h) = (g.width, g.height);
            let mut dl = g.channel(0).to_vec();
            let (gx, gy) = (g.channel(1), g.channel(2));
            for r in 0..h {
                for c in 0..w {
                    let i = r * w + c;
                    if c + 1 < w {
                        dl[i + 1] += gx[i];
                        dl[i] -= gx[i];
                    }
                    if r + 1 < h {
                        dl[i + w] += gy[i];
                        dl[i] -= gy[i];
                    }
                }
            }
            let (cw, ch) = carry_dims;
            for r in 0..ch {
                for c in 0..cw {
                    let v = 0.25 * carry[r * cw + c];
                    let a = 2 * r * w + 2 * c;
                    dl[a] += v;
                    dl[a + 1] += v;
                    dl[a + w] += v;
                    dl[a + w + 1] += v;
                }
            }
            carry = dl;
            carry_dims = (w, h);
        }
        if carry.is_empty() {
            return vec![[0.0; 3]; image.len()];
        }
        carry.iter().map(|v| LUMA.map(|k| k * v)).collect()
    }
}

/// `M = F Fᵀ / (H·W)`, row-major `D x D`.
pub fn gram_matrix(f: &FeatureMap) -> Vec<f64> {
    let (d, p) = (f.depth, f.pixels());
    let mut m = vec![0.0; d * d];
    if p == 0 {
        return m;
    }
    for a in 0..d {
        for b in a..d {
            let v: f64 = f.channel(a).iter().zip(f.channel(b)).map(|(x, y)| x * y).sum::<f64>() / p as f64;
            m[a * d + b] = v;
            m[b * d + a] = v;
        }
    }
    m
}

fn apply_mask(image: &ImageRgb, mask: Option<&FrustumMask>) -> ImageRgb {
    match mask {
        None => image.clone(),
        Some(m) => ImageRgb {
            data: image
                .data
                .iter()
                .enumerate()
                .map(|(i, p)| if m.values[i] { *p } else { [0.0; 3] })
                .collect(),
            ..image.clone()
        },
    }
}

/// `Σ_l λ_feat‖φ_l(Î) − φ_l(I)‖² + λ_gram‖M_l(Î) − M_l(I)‖²` with
/// `λ_feat = 1/(D·H·W)` and `λ_gram = 10/D²`, on mask-multiplied images.
/// Returns the value and the gradient w.r.t. `pred`.
pub fn perceptual_loss(
    pred: &ImageRgb,
    target: &ImageRgb,
    mask: Option<&FrustumMask>,
    extractor: &dyn FeatureExtractor,
) -> Result<(f64, Vec<[f64; 3]>)> {
    if (pred.width, pred.height) != (target.width, target.height)
        || mask.is_some_and(|m| (m.width, m.height) != (pred.width, pred.height))
    {
        return Err(Error::DimensionMismatch(format!(
            "perceptual inputs {}x{} / {}x{}",
            pred.width, pred.height, target.width, target.height
        )));
    }
    let p = apply_mask(pred, mask);
    let t = apply_mask(target, mask);
    let fp = extractor.extract(&p);
    let ft = extractor.extract(&t);
    for got in [fp.len(), ft.len()] {
        if got != PERCEPTUAL_LEVELS {
            return Err(Error::LayerCount {
                expected: PERCEPTUAL_LEVELS,
                got,
            });
        }
    }

    let mut value = 0.0;
    let mut grads = Vec::with_capacity(fp.len());
    for (a, b) in fp.iter().zip(&ft) {
        let mut g = FeatureMap::zeros(a.depth, a.width, a.height);
        let (d, n) = (a.depth, a.pixels());
        if d == 0 || n == 0 {
            grads.push(g);
            continue;
        }
        let l_feat = 1.0 / (d * n) as f64;
        let l_gram = 10.0 / (d * d) as f64;
        for (i, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
            value += l_feat * (x - y) * (x - y);
            g.data[i] = 2.0 * l_feat * (x - y);
        }
        let ma = gram_matrix(a);
        let mb = gram_matrix(b);
        let diff: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| x - y).collect();
        value += l_gram * diff.iter().map(|v| v * v).sum::<f64>();
        // d/dF ‖F Fᵀ/n − M‖² = (4/n)(F Fᵀ/n − M) F
        let k = 4.0 * l_gram / n as f64;
        for r in 0..d {
            for s in 0..d {
                let coef = k * diff[r * d + s];
                if coef == 0.0 {
                    continue;
                }
                let src = a.channel(s).to_vec();
                for (dst, v) in g.channel_mut(r).iter_mut().zip(src) {
                    *dst += coef * v;
                }
            }
        }
        grads.push(g);
    }
    let mut d_pred = extractor.extract_vjp(&p, &grads);
    if let Some(m) = mask {
        for (i, g) in d_pred.iter_mut().enumerate() {
            if !m.values[i] {
                *g = [0.0; 3];
            }
        }
    }
    Ok((value, d_pred))
}
