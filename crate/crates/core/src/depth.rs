//! Depth adjustment, second-layer synthesis, scale alignment, frustum masks
//! and flip-consistency uncertainty.

use nalgebra::{Vector3, Vector4};

use crate::error::{Error, Result};
use crate::scene::{check_positive_depth, Camera, LayeredDepthMap, ScaleMap, LAYERS};

/// Default NDC bound for [`frustum_mask`].
pub const FRUSTUM_BOUND: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrustumMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<bool>,
}

impl FrustumMask {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![true; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.values[row * self.width + col]
    }

    pub fn weight(&self, i: usize) -> f64 {
        if self.values[i] {
            1.0
        } else {
            0.0
        }
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

fn check_dims(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Multiplies both depth layers by the scale map.
pub fn apply_scale_map(depth: &LayeredDepthMap, scale: &ScaleMap) -> Result<LayeredDepthMap> {
    check_dims("scale map", (depth.width, depth.height), (scale.width, scale.height))?;
    if let Some((index, &u)) = scale.log_scale.iter().enumerate().find(|(_, u)| !u.is_finite()) {
        return Err(Error::NonPositiveScale {
            index,
            value: u.exp(),
        });
    }
    let layers = std::array::from_fn(|l| {
        depth.layers[l]
            .iter()
            .zip(&scale.log_scale)
            .map(|(d, u)| d * u.exp())
            .collect()
    });
    Ok(LayeredDepthMap {
        width: depth.width,
        height: depth.height,
        layers,
    })
}

/// Gradient w.r.t. the log-scale map given gradients w.r.t. the adjusted layers.
pub fn apply_scale_map_backward(adjusted: &LayeredDepthMap, d_adjusted: &[Vec<f64>; LAYERS]) -> Vec<f64> {
    let mut du = vec![0.0; adjusted.width * adjusted.height];
    for l in 0..LAYERS {
        for (i, g) in d_adjusted[l].iter().enumerate() {
            du[i] += g * adjusted.layers[l][i];
        }
    }
    du
}

/// Layer 2 is the max-dilation of `first` over a `(2r+1)²` square window, so
/// background depth extends under foreground edges.
pub fn second_layer_heuristic(first: &[f64], width: usize, height: usize, radius: usize) -> Result<LayeredDepthMap> {
    if first.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "depth has {} values, expected {width}x{height}",
            first.len()
        )));
    }
    check_positive_depth(first.iter().copied())?;
    let mut rows = vec![0.0; first.len()];
    for r in 0..height {
        for c in 0..width {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(width - 1);
            rows[r * width + c] = first[r * width + lo..=r * width + hi]
                .iter()
                .copied()
                .fold(f64::MIN, f64::max);
        }
    }
    let mut second = vec![0.0; first.len()];
    for r in 0..height {
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(height - 1);
        for c in 0..width {
            second[r * width + c] = (lo..=hi).map(|rr| rows[rr * width + c]).fold(f64::MIN, f64::max);
        }
    }
    LayeredDepthMap::new(width, height, first.to_vec(), second)
}

/// Global scale `s = median(D_gt / D̂)` over valid ground-truth pixels
/// (finite and positive), using the lower median. Returns `s` and `s·D̂`.
pub fn median_scale_align(predicted: &LayeredDepthMap, ground_truth: &[f64]) -> Result<(f64, LayeredDepthMap)> {
    let first = &predicted.layers[0];
    if ground_truth.len() != first.len() {
        return Err(Error::DimensionMismatch(format!(
            "ground truth has {} values, prediction {}",
            ground_truth.len(),
            first.len()
        )));
    }
    let mut ratios: Vec<f64> = ground_truth
        .iter()
        .zip(first)
        .filter(|(g, p)| g.is_finite() && **g > 0.0 && p.is_finite() && **p > 0.0)
        .map(|(g, p)| g / p)
        .collect();
    if ratios.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let mid = (ratios.len() - 1) / 2;
    let (_, s, _) = ratios.select_nth_unstable_by(mid, f64::total_cmp);
    let s = *s;
    let layers = std::array::from_fn(|l| predicted.layers[l].iter().map(|d| d * s).collect());
    Ok((
        s,
        LayeredDepthMap {
            width: predicted.width,
            height: predicted.height,
            layers,
        },
    ))
}

/// Marks target pixels whose surface point (at `target_depth`) lands inside
/// the source view's normalized frame, `|x|, |y| <= bound`.
pub fn frustum_mask(target: &Camera, source: &Camera, target_depth: &[f64], bound: f64) -> Result<FrustumMask> {
    let (w, h) = (target.width, target.height);
    if target_depth.len() != w * h {
        return Err(Error::DimensionMismatch(format!(
            "target depth has {} values, camera is {w}x{h}",
            target_depth.len()
        )));
    }
    let to_source = source.extrinsics.matrix() * target.extrinsics.inverse();
    let k_src = source.intrinsics.to_normalized(source.width, source.height);
    let values = (0..w * h)
        .map(|i| {
            let (col, row) = (i % w, i / w);
            let d = target_depth[i];
            if !(d.is_finite() && d > 0.0) {
                return false;
            }
            let p = target.intrinsics.unproject(col as f64 + 0.5, row as f64 + 0.5, d);
            let q: Vector3<f64> = (to_source * Vector4::new(p.x, p.y, p.z, 1.0)).xyz();
            if !(q.z > 0.0) {
                return false;
            }
            let [x, y] = k_src.project(&q);
            x.abs() <= bound && y.abs() <= bound
        })
        .collect();
    Ok(FrustumMask {
        width: w,
        height: h,
        values,
    })
}

/// Relative disagreement `|a - b| / a` between a prediction and the
/// (already un-flipped) prediction on the mirrored image.
pub fn flip_uncertainty(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    check_positive_depth(a.iter().copied())?;
    Ok(a.iter().zip(b).map(|(a, b)| (a - b).abs() / a).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Extrinsics, Intrinsics};
    use nalgebra::{Matrix3, Rotation3};

    fn cam(center: Vector3<f64>, rot: Matrix3<f64>) -> Camera {
        Camera::new(
            Intrinsics::new(64.0, 64.0, 32.0, 32.0),
            Extrinsics::looking_from(rot, center).unwrap(),
            64,
            64,
        )
    }

    #[test]
    fn identity_transform_keeps_everything() {
        let c = cam(Vector3::zeros(), Matrix3::identity());
        let m = frustum_mask(&c, &c, &vec![3.0; 64 * 64], FRUSTUM_BOUND).unwrap();
        assert_eq!(m.count(), 64 * 64);
    }

    #[test]
    fn looking_away_masks_everything() {
        let src = cam(Vector3::zeros(), Matrix3::identity());
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI).into_inner();
        let tgt = cam(Vector3::zeros(), rot);
        let m = frustum_mask(&tgt, &src, &vec![3.0; 64 * 64], FRUSTUM_BOUND).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn sideways_baseline_masks_hand_computed_band() {
        // target 0.5 m to the right at depth 2: source NDC x = (col + 0.5 - 32) / 32 + 0.5,
        // which exceeds 1.05 from column 50 on
        let src = cam(Vector3::zeros(), Matrix3::identity());
        let tgt = cam(Vector3::new(0.5, 0.0, 0.0), Matrix3::identity());
        let m = frustum_mask(&tgt, &src, &vec![2.0; 64 * 64], FRUSTUM_BOUND).unwrap();
        for row in 0..64 {
            for col in 0..64 {
                assert_eq!(m.get(col, row), col < 50, "col {col}");
            }
        }
    }

    #[test]
    fn wider_bound_never_removes_pixels() {
        let src = cam(Vector3::zeros(), Matrix3::identity());
        let rot = Rotation3::from_euler_angles(0.1, 0.2, 0.0).into_inner();
        let tgt = cam(Vector3::new(0.3, -0.2, 0.1), rot);
        let depth: Vec<f64> = (0..64 * 64).map(|i| 1.0 + (i % 17) as f64 * 0.2).collect();
        let a = frustum_mask(&tgt, &src, &depth, 1.05).unwrap();
        let b = frustum_mask(&tgt, &src, &depth, 1.10).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(a, b)| !a || *b));
        assert!(b.count() > a.count());
    }

    #[test]
    fn dilation_bleeds_background_by_radius() {
        let (w, h) = (12, 4);
        let d1: Vec<f64> = (0..w * h).map(|i| if i % w < 6 { 1.0 } else { 5.0 }).collect();
        let layered = second_layer_heuristic(&d1, w, h, 2).unwrap();
        for i in 0..w * h {
            let col = i % w;
            let expected = if col >= 4 { 5.0 } else { 1.0 };
            assert_eq!(layered.layers[1][i], expected);
            assert!(layered.layers[1][i] >= layered.layers[0][i]);
        }
        let flat = second_layer_heuristic(&d1, w, h, 0).unwrap();
        assert_eq!(flat.layers[0], flat.layers[1]);
    }

    #[test]
    fn median_alignment_recovers_exact_factor() {
        let d: Vec<f64> = (0..50).map(|i| 0.5 + i as f64 * 0.13).collect();
        let pred = LayeredDepthMap::duplicated(10, 5, d.clone()).unwrap();
        for c in [0.5, 1.0, 2.0] {
            let gt: Vec<f64> = d.iter().map(|v| v * c).collect();
            assert_eq!(median_scale_align(&pred, &gt).unwrap().0, c);
        }
        assert!(matches!(
            median_scale_align(&pred, &vec![0.0; 50]),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn lower_median_on_even_count() {
        let pred = LayeredDepthMap::duplicated(4, 1, vec![1.0; 4]).unwrap();
        let (s, _) = median_scale_align(&pred, &[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s, 2.0);
    }

    #[test]
    fn scale_map_round_trip_and_flip() {
        let d = LayeredDepthMap::new(3, 1, vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]).unwrap();
        let s = ScaleMap::from_scales(3, 1, &[0.5, 1.0, 3.0]).unwrap();
        let there = apply_scale_map(&d, &s).unwrap();
        assert!((there.layers[0][2] - 9.0).abs() < 1e-12);
        let back = apply_scale_map(&there, &s.inverted()).unwrap();
        for l in 0..2 {
            for (a, b) in back.layers[l].iter().zip(&d.layers[l]) {
                assert!((a - b).abs() <= 1e-12 * b);
            }
        }
        let u = flip_uncertainty(&[1.0, 2.0], &[1.1, 2.2]).unwrap();
        assert!((u[0] - 0.1).abs() < 1e-12 && (u[1] - 0.1).abs() < 1e-12);
    }
}
