//! PSNR and SSIM, with optional masks, and the shift-sensitivity table.

use serde::Serialize;

use crate::depth::FrustumMask;
use crate::error::{Error, Result};
use crate::scene::ImageRgb;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check(a: &ImageRgb, b: &ImageRgb) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )))
    }
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    check(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (0..3).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(psnr_from_mse(sum / (3 * a.len()).max(1) as f64))
}

/// PSNR over mask pixels only; `None` when the mask is empty.
pub fn psnr_masked(a: &ImageRgb, b: &ImageRgb, mask: &FrustumMask) -> Result<Option<f64>> {
    check(a, b)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
        if mask.values[i] {
            sum += (0..3).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>();
            n += 3;
        }
    }
    Ok((n > 0).then(|| psnr_from_mse(sum / n as f64)))
}

fn gaussian_window() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut w: [f64; WINDOW] = std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable window filter over the valid region.
fn filter(v: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w + 1 - WINDOW, h + 1 - WINDOW);
    let mut rows = vec![0.0; ow * h];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..WINDOW).map(|i| k[i] * v[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..WINDOW).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    (out, ow, oh)
}

/// Per-channel SSIM maps over the valid (unpadded) region, with its size.
fn ssim_maps(a: &ImageRgb, b: &ImageRgb) -> Result<([Vec<f64>; 3], usize, usize)> {
    check(a, b)?;
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "SSIM needs at least {WINDOW}x{WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let k = gaussian_window();
    let (w, h) = (a.width, a.height);
    let mut dims = (0, 0);
    let maps = std::array::from_fn(|c| {
        let x: Vec<f64> = a.data.iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, ow, oh) = filter(&x, w, h, &k);
        let (my, _, _) = filter(&y, w, h, &k);
        let (sxx, _, _) = filter(&xx, w, h, &k);
        let (syy, _, _) = filter(&yy, w, h, &k);
        let (sxy, _, _) = filter(&xy, w, h, &k);
        dims = (ow, oh);
        (0..ow * oh)
            .map(|i| {
                let (mx, my) = (mx[i], my[i]);
                let vx = sxx[i] - mx * mx;
                let vy = syy[i] - my * my;
                let cov = sxy[i] - mx * my;
                ((2.0 * mx * my + C1) * (2.0 * cov + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))
            })
            .collect()
    });
    Ok((maps, dims.0, dims.1))
}

/// Mean SSIM (11x11 Gaussian window, σ = 1.5) averaged over channels.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    let (maps, ow, oh) = ssim_maps(a, b)?;
    let n = (ow * oh) as f64;
    Ok(maps.iter().map(|m| m.iter().sum::<f64>() / n).sum::<f64>() / 3.0)
}

/// Mean SSIM over window positions whose center pixel is in the mask;
/// `None` when no such position exists.
pub fn ssim_masked(a: &ImageRgb, b: &ImageRgb, mask: &FrustumMask) -> Result<Option<f64>> {
    let (maps, ow, oh) = ssim_maps(a, b)?;
    let half = WINDOW / 2;
    let keep: Vec<usize> = (0..ow * oh)
        .filter(|&i| mask.get(i % ow + half, i / ow + half))
        .collect();
    if keep.is_empty() {
        return Ok(None);
    }
    let n = keep.len() as f64;
    Ok(Some(
        maps.iter().map(|m| keep.iter().map(|&i| m[i]).sum::<f64>() / n).sum::<f64>() / 3.0,
    ))
}

/// Shifts right by `pixels`, replicating the left edge.
pub fn shift_horizontal(image: &ImageRgb, pixels: usize) -> ImageRgb {
    ImageRgb::from_fn(image.width, image.height, |c, r| image.get(c.saturating_sub(pixels), r))
}

/// Per-channel global mean, broadcast to every pixel.
pub fn mean_image(image: &ImageRgb) -> ImageRgb {
    let n = image.len().max(1) as f64;
    let mut m = [0.0; 3];
    for p in &image.data {
        for c in 0..3 {
            m[c] += p[c] / n;
        }
    }
    ImageRgb::filled(image.width, image.height, m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRow {
    /// Shift as a fraction of the width; `None` for the mean-image row.
    pub fraction: Option<f64>,
    pub pixels: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Compares `image` with copies shifted by `round(f·W)` pixels for each
/// fraction, then with its mean image (last row).
pub fn shift_sensitivity(image: &ImageRgb, fractions: &[f64]) -> Result<Vec<ShiftRow>> {
    let mut rows = Vec::with_capacity(fractions.len() + 1);
    for &f in fractions {
        if !(f.is_finite() && f >= 0.0) {
            return Err(Error::InvalidConfig(format!("shift fraction must be >= 0, got {f}")));
        }
        let pixels = (f * image.width as f64).round() as usize;
        let shifted = shift_horizontal(image, pixels);
        rows.push(ShiftRow {
            fraction: Some(f),
            pixels,
            psnr: psnr(image, &shifted)?,
            ssim: ssim(image, &shifted)?,
        });
    }
    let mean = mean_image(image);
    rows.push(ShiftRow {
        fraction: None,
        pixels: 0,
        psnr: psnr(image, &mean)?,
        ssim: ssim(image, &mean)?,
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> ImageRgb {
        ImageRgb::from_fn(w, h, |c, r| {
            let (x, y) = (c as f64, r as f64);
            [
                0.5 + 0.4 * (0.3 * x).sin() * (0.2 * y).cos(),
                0.5 + 0.3 * (0.17 * x + 0.11 * y).sin(),
                0.3 + 0.2 * (0.05 * x * y).cos(),
            ]
        })
    }

    #[test]
    fn identical_images_hit_caps() {
        let a = textured(20, 16);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_psnr_is_twenty() {
        let a = ImageRgb::filled(12, 12, [0.3; 3]);
        let b = ImageRgb::filled(12, 12, [0.4; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_direct_window_sums() {
        let a = textured(13, 12);
        let b = ImageRgb::from_fn(13, 12, |c, r| {
            let p = a.get(c, r);
            [p[0] * 0.9 + 0.05, p[1], (p[2] + 0.1 * ((c * r) % 3) as f64).min(1.0)]
        });
        let k = gaussian_window();
        let mut total = 0.0;
        let mut count = 0.0;
        for ch in 0..3 {
            for r0 in 0..=12 - WINDOW {
                for c0 in 0..=13 - WINDOW {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..WINDOW {
                        for j in 0..WINDOW {
                            let wgt = k[i] * k[j];
                            let x = a.get(c0 + j, r0 + i)[ch];
                            let y = b.get(c0 + j, r0 + i)[ch];
                            mx += wgt * x;
                            my += wgt * y;
                            sxx += wgt * x * x;
                            syy += wgt * y * y;
                            sxy += wgt * x * y;
                        }
                    }
                    let (vx, vy, cv) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    total += ((2.0 * mx * my + C1) * (2.0 * cv + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                    count += 1.0;
                }
            }
        }
        assert!((ssim(&a, &b).unwrap() - total / count).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_not_applicable() {
        let a = textured(12, 12);
        let mut m = FrustumMask::full(12, 12);
        m.values.iter_mut().for_each(|v| *v = false);
        assert_eq!(psnr_masked(&a, &a, &m).unwrap(), None);
        assert_eq!(ssim_masked(&a, &a, &m).unwrap(), None);
    }

    #[test]
    fn zero_shift_is_identity() {
        let a = textured(24, 16);
        let rows = shift_sensitivity(&a, &[0.0]).unwrap();
        assert_eq!(rows[0].psnr, PSNR_CAP);
        assert!((rows[0].ssim - 1.0).abs() < 1e-12);
        assert_eq!(rows[1].fraction, None);
    }
}
