use crate::depth::FrustumMask;
use crate::error::{Error, Result};
use crate::scene::{GrayImage, ImageRgb};

/// A scalar term and its gradient w.r.t. the input-view image and each
/// novel-view image.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrads<T> {
    pub value: f64,
    pub input: Vec<T>,
    pub novel: Vec<Vec<T>>,
}

fn check(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1)))
    }
}

/// Mean absolute difference over pixels and channels, restricted to mask
/// pixels when given. An empty mask contributes zero.
pub fn masked_l1(pred: &ImageRgb, target: &ImageRgb, mask: Option<&FrustumMask>) -> Result<(f64, Vec<[f64; 3]>)> {
    check("color target", (pred.width, pred.height), (target.width, target.height))?;
    if let Some(m) = mask {
        check("mask", (pred.width, pred.height), (m.width, m.height))?;
    }
    let weight = |i: usize| mask.map_or(1.0, |m| m.weight(i));
    let count: f64 = (0..pred.len()).map(weight).sum();
    let mut grad = vec![[0.0; 3]; pred.len()];
    if count == 0.0 {
        return Ok((0.0, grad));
    }
    let denom = 3.0 * count;
    let mut sum = 0.0;
    for (i, (p, t)) in pred.data.iter().zip(&target.data).enumerate() {
        let m = weight(i);
        if m == 0.0 {
            continue;
        }
        for c in 0..3 {
            let d = p[c] - t[c];
            sum += d.abs();
            grad[i][c] = if d > 0.0 {
                1.0 / denom
            } else if d < 0.0 {
                -1.0 / denom
            } else {
                0.0
            };
        }
    }
    Ok((sum / denom, grad))
}

/// L1 on the input view plus the masked L1 of each novel view.
pub fn color_loss(
    pred_in: &ImageRgb,
    target_in: &ImageRgb,
    novel: &[(&ImageRgb, &ImageRgb, &FrustumMask)],
) -> Result<ViewGrads<[f64; 3]>> {
    let (mut value, input) = masked_l1(pred_in, target_in, None)?;
    let mut grads = Vec::with_capacity(novel.len());
    for (pred, target, mask) in novel {
        let (v, g) = masked_l1(pred, target, Some(mask))?;
        value += v;
        grads.push(g);
    }
    Ok(ViewGrads {
        value,
        input,
        novel: grads,
    })
}

/// Binary cross-entropy of rendered alpha against 1, i.e. `-ln Â` with
/// `Â >= 1e-6`, averaged over the input pixels and the masked novel pixels
/// together.
pub fn alpha_loss(alpha_in: &GrayImage, novel: &[(&GrayImage, &FrustumMask)]) -> Result<ViewGrads<f64>> {
    const FLOOR: f64 = 1e-6;
    for (a, m) in novel {
        check("alpha mask", (a.width, a.height), (m.width, m.height))?;
    }
    let count = alpha_in.data.len() as f64 + novel.iter().map(|(_, m)| m.count() as f64).sum::<f64>();
    let term = |a: f64| -(a.max(FLOOR)).ln();
    let slope = |a: f64| if a > FLOOR { -1.0 / (a * count) } else { 0.0 };
    if count == 0.0 {
        return Ok(ViewGrads {
            value: 0.0,
            input: vec![],
            novel: novel.iter().map(|(a, _)| vec![0.0; a.data.len()]).collect(),
        });
    }
    let mut sum: f64 = alpha_in.data.iter().map(|&a| term(a)).sum();
    let input = alpha_in.data.iter().map(|&a| slope(a)).collect();
    let mut grads = Vec::with_capacity(novel.len());
    for (a, m) in novel {
        let mut g = vec![0.0; a.data.len()];
        for (i, &v) in a.data.iter().enumerate() {
            if m.values[i] {
                sum += term(v);
                g[i] = slope(v);
            }
        }
        grads.push(g);
    }
    Ok(ViewGrads {
        value: sum / count,
        input,
        novel: grads,
    })
}
