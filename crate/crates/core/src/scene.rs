//! Value types shared across the pipeline.
//!
//! Images are row-major with a top-left origin and y pointing down; pixel
//! `(col, row)` has its center at `(col + 0.5, row + 0.5)`. Depth is stored in
//! meters and inverted on demand.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// Number of depth layers (and Gaussian layers) in the representation.
pub const LAYERS: usize = 2;

/// Number of scalar attributes per Gaussian.
pub const ATTRIBUTES: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: [f64; 3]) {
        self.data[row * self.width + col] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_dims<T: Dims>(&self, other: &T) -> bool {
        self.width == other.dims().0 && self.height == other.dims().1
    }

    /// Channel values clamped to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| p.map(|v| v.clamp(0.0, 1.0)))
                .collect(),
        }
    }

    pub fn check_range(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::DimensionMismatch("image has zero extent".into()));
        }
        for (i, p) in self.data.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
                return Err(Error::DimensionMismatch(format!(
                    "pixel {i} has channel values outside [0, 1]: {p:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Single-channel image (alpha, inverse depth, masks, uncertainty).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

pub trait Dims {
    fn dims(&self) -> (usize, usize);
}

impl Dims for ImageRgb {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dims for GrayImage {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dims for LayeredDepthMap {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dims for ScaleMap {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Two-layer depth in meters. Layer 0 holds the primary visible surfaces,
/// layer 1 the occluded / secondary surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredDepthMap {
    pub width: usize,
    pub height: usize,
    pub layers: [Vec<f64>; LAYERS],
}

impl LayeredDepthMap {
    pub fn new(width: usize, height: usize, first: Vec<f64>, second: Vec<f64>) -> Result<Self> {
        let map = Self {
            width,
            height,
            layers: [first, second],
        };
        map.check()?;
        Ok(map)
    }

    /// Both layers set to the same single-layer depth.
    pub fn duplicated(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        Self::new(width, height, depth.clone(), depth)
    }

    pub fn check(&self) -> Result<()> {
        for layer in &self.layers {
            if layer.len() != self.width * self.height {
                return Err(Error::DimensionMismatch(format!(
                    "depth layer has {} values, expected {}x{}",
                    layer.len(),
                    self.width,
                    self.height
                )));
            }
        }
        check_positive_depth(self.layers.iter().flatten().copied())
    }

    #[inline]
    pub fn get(&self, layer: usize, col: usize, row: usize) -> f64 {
        self.layers[layer][row * self.width + col]
    }

    pub fn inverse(&self, layer: usize) -> Vec<f64> {
        self.layers[layer].iter().map(|d| 1.0 / d).collect()
    }
}

pub(crate) fn check_positive_depth(values: impl IntoIterator<Item = f64>) -> Result<()> {
    for (index, value) in values.into_iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::NonPositiveDepth { index, value });
        }
    }
    Ok(())
}

/// Multiplicative depth adjustment, stored as its logarithm `u` with
/// scale `s = exp(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMap {
    pub width: usize,
    pub height: usize,
    pub log_scale: Vec<f64>,
}

impl ScaleMap {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            log_scale: vec![0.0; width * height],
        }
    }

    pub fn from_scales(width: usize, height: usize, scales: &[f64]) -> Result<Self> {
        if scales.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "scale map has {} values, expected {width}x{height}",
                scales.len()
            )));
        }
        let mut log_scale = Vec::with_capacity(scales.len());
        for (index, &value) in scales.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::NonPositiveScale { index, value });
            }
            log_scale.push(value.ln());
        }
        Ok(Self {
            width,
            height,
            log_scale,
        })
    }

    pub fn scale(&self, index: usize) -> f64 {
        self.log_scale[index].exp()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.log_scale.iter().map(|u| u.exp()).collect()
    }

    /// Element-wise reciprocal scale.
    pub fn inverted(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            log_scale: self.log_scale.iter().map(|u| -u).collect(),
        }
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// The map `(x, y, z) -> (x/z, y/z)` expressed as intrinsics.
    pub fn unit() -> Self {
        Self::new(1.0, 1.0, 0.0, 0.0)
    }

    /// Same camera expressed in the normalized image coordinates used for
    /// Gaussian positions, where the image spans `[-1, 1]` on both axes.
    pub fn to_normalized(&self, width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        Self {
            fx: 2.0 * self.fx / w,
            fy: 2.0 * self.fy / h,
            cx: 2.0 * self.cx / w - 1.0,
            cy: 2.0 * self.cy / h - 1.0,
        }
    }

    /// 4x4 embedding that keeps metric depth in the third row.
    pub fn matrix4(&self) -> Matrix4<f64> {
        Matrix4::new(
            self.fx, 0.0, self.cx, 0.0, //
            0.0, self.fy, self.cy, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        )
    }

    pub fn inverse_matrix4(&self) -> Result<Matrix4<f64>> {
        if self.fx == 0.0 || self.fy == 0.0 || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::SingularMatrix(format!(
                "intrinsics with fx={} fy={}",
                self.fx, self.fy
            )));
        }
        Ok(Matrix4::new(
            1.0 / self.fx, 0.0, -self.cx / self.fx, 0.0, //
            0.0, 1.0 / self.fy, -self.cy / self.fy, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ))
    }

    /// Pixel coordinates of a camera-space point in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> [f64; 2] {
        [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy]
    }

    /// Camera-space point at depth `z` through pixel position `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics(Matrix4<f64>);

impl Extrinsics {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn new(matrix: Matrix4<f64>) -> Result<Self> {
        let r = matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidExtrinsics("non-finite entry".into()));
        }
        if orth > 1e-6 {
            return Err(Error::InvalidExtrinsics(format!(
                "rotation block is not orthonormal (max |RᵀR - I| = {orth:e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidExtrinsics(format!(
                "rotation block has determinant {}",
                r.determinant()
            )));
        }
        let last = matrix.row(3);
        if last != Vector4::new(0.0, 0.0, 0.0, 1.0).transpose() {
            return Err(Error::InvalidExtrinsics(format!(
                "last row must be [0, 0, 0, 1], got {last}"
            )));
        }
        Ok(Self(matrix))
    }

    pub fn from_rotation_translation(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::new(m)
    }

    /// Camera whose center sits at `center` (world coordinates) with the
    /// given world-to-camera rotation.
    pub fn looking_from(rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self> {
        Self::from_rotation_translation(rotation, -(rotation * center))
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Rigid inverse `[Rᵀ | -Rᵀt]`.
    pub fn inverse(&self) -> Matrix4<f64> {
        let rt = self.rotation().transpose();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * self.translation())));
        m
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }
}

/// A posed pinhole camera with its image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics, width: usize, height: usize) -> Self {
        Self {
            intrinsics,
            extrinsics,
            width,
            height,
        }
    }

    /// Same pose with intrinsics rescaled to another resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        let k = self.intrinsics;
        Self {
            intrinsics: Intrinsics::new(k.fx * sx, k.fy * sy, k.cx * sx, k.cy * sy),
            extrinsics: self.extrinsics,
            width,
            height,
        }
    }
}

/// One Gaussian primitive; the same layout carries raw deltas and gradients.
///
/// Rotation is a quaternion stored `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: [f64; 4],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl Default for Gaussian {
    fn default() -> Self {
        Self::zeros()
    }
}

impl Gaussian {
    pub fn zeros() -> Self {
        Self {
            position: Vector3::zeros(),
            scale: Vector3::zeros(),
            rotation: [0.0; 4],
            color: [0.0; 3],
            opacity: 0.0,
        }
    }

    /// Attributes in file order: position, scale, rotation, color, opacity.
    pub fn to_array(&self) -> [f64; ATTRIBUTES] {
        let p = &self.position;
        let s = &self.scale;
        let q = &self.rotation;
        let c = &self.color;
        [
            p.x, p.y, p.z, s.x, s.y, s.z, q[0], q[1], q[2], q[3], c[0], c[1], c[2], self.opacity,
        ]
    }

    pub fn from_array(a: &[f64; ATTRIBUTES]) -> Self {
        Self {
            position: Vector3::new(a[0], a[1], a[2]),
            scale: Vector3::new(a[3], a[4], a[5]),
            rotation: [a[6], a[7], a[8], a[9]],
            color: [a[10], a[11], a[12]],
            opacity: a[13],
        }
    }

    pub fn add_assign(&mut self, other: &Gaussian) {
        let mut a = self.to_array();
        for (x, y) in a.iter_mut().zip(other.to_array()) {
            *x += y;
        }
        *self = Self::from_array(&a);
    }

    pub fn is_zero(&self) -> bool {
        self.to_array().iter().all(|v| *v == 0.0)
    }
}

/// Attribute groups, used for reporting and per-group checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttributeGroup {
    Position,
    Scale,
    Rotation,
    Color,
    Opacity,
}

impl AttributeGroup {
    pub const ALL: [AttributeGroup; 5] = [
        AttributeGroup::Position,
        AttributeGroup::Scale,
        AttributeGroup::Rotation,
        AttributeGroup::Color,
        AttributeGroup::Opacity,
    ];

    /// Index range inside [`Gaussian::to_array`].
    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            AttributeGroup::Position => 0..3,
            AttributeGroup::Scale => 3..6,
            AttributeGroup::Rotation => 6..10,
            AttributeGroup::Color => 10..13,
            AttributeGroup::Opacity => 13..14,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttributeGroup::Position => "position",
            AttributeGroup::Scale => "scale",
            AttributeGroup::Rotation => "rotation",
            AttributeGroup::Color => "color",
            AttributeGroup::Opacity => "opacity",
        }
    }
}

/// Layered grid of Gaussians, indexed `layer * grid_h * grid_w + row * grid_w + col`.
///
/// `scale_max` is the constant that maps metric scale into the unit interval
/// for the sigmoid scale activation; it travels with the set so the mapping
/// can be inverted after composition.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub grid_w: usize,
    pub grid_h: usize,
    pub scale_max: f64,
    pub gaussians: Vec<Gaussian>,
}

impl GaussianSet {
    pub fn empty() -> Self {
        Self {
            grid_w: 0,
            grid_h: 0,
            scale_max: 1.0,
            gaussians: Vec::new(),
        }
    }

    /// `N = layers * grid_h * grid_w`.
    pub fn count(&self) -> usize {
        LAYERS * self.grid_h * self.grid_w
    }

    pub fn index(&self, layer: usize, col: usize, row: usize) -> usize {
        (layer * self.grid_h + row) * self.grid_w + col
    }

    /// `(layer, col, row)` of a flat index.
    pub fn cell(&self, index: usize) -> (usize, usize, usize) {
        let per_layer = self.grid_w * self.grid_h;
        let layer = index / per_layer;
        let rem = index % per_layer;
        (layer, rem % self.grid_w, rem / self.grid_w)
    }

    /// Rounds every attribute to the nearest `f32`, the precision of the
    /// on-disk format.
    pub fn quantized_f32(&self) -> Self {
        let gaussians = self
            .gaussians
            .iter()
            .map(|g| Gaussian::from_array(&g.to_array().map(|v| v as f32 as f64)))
            .collect();
        Self {
            gaussians,
            ..self.clone()
        }
    }

    /// Lists every violated invariant; an empty list means the set is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.gaussians.len() != self.count() {
            out.push(Violation {
                attribute: "count",
                index: self.gaussians.len(),
                rule: format!(
                    "expected {} gaussians for a {}x{}x{} grid",
                    self.count(),
                    LAYERS,
                    self.grid_h,
                    self.grid_w
                ),
            });
        }
        for (index, g) in self.gaussians.iter().enumerate() {
            let mut push = |attribute, rule: String| out.push(Violation { attribute, index, rule });
            if !g.position.iter().all(|v| v.is_finite()) {
                push("position", "non-finite component".into());
            } else if g.position.z <= 0.0 {
                push("position", format!("z must be > 0, got {}", g.position.z));
            }
            if !g.scale.iter().all(|v| v.is_finite() && *v > 0.0) {
                push("scale", format!("components must be finite and > 0, got {:?}", g.scale.as_slice()));
            }
            let norm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
                push("rotation", format!("quaternion norm must be 1, got {norm}"));
            }
            if !g.color.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                push("color", format!("channels must lie in [0, 1], got {:?}", g.color));
            }
            if !(g.opacity.is_finite() && (0.0..=1.0).contains(&g.opacity)) {
                push("opacity", format!("opacity must lie in [0, 1], got {}", g.opacity));
            }
        }
        out
    }
}

/// One failed invariant reported by [`GaussianSet::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub attribute: &'static str,
    pub index: usize,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} at {}: {}", self.attribute, self.index, self.rule)
    }
}

/// Raw unconstrained refinements with the same grid shape as a [`GaussianSet`].
///
/// Position deltas act on `(x/z, y/z, 1/z)`, not on metric position.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSet {
    pub grid_w: usize,
    pub grid_h: usize,
    pub values: Vec<Gaussian>,
}

impl DeltaSet {
    pub fn zeros_like(set: &GaussianSet) -> Self {
        Self {
            grid_w: set.grid_w,
            grid_h: set.grid_h,
            values: vec![Gaussian::zeros(); set.gaussians.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|g| g.to_array().iter().all(|v| v.is_finite()))
    }
}

/// Rendered images for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: ImageRgb,
    pub alpha: GrayImage,
    /// Alpha-weighted mean inverse depth; zero where nothing was drawn.
    pub inv_depth: GrayImage,
    pub rendered: usize,
    pub culled: usize,
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Hamilton product `a * b` of `(w, x, y, z)` quaternions.
pub fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Quaternion `(w, x, y, z)` of a rotation matrix.
pub fn matrix_to_quat(m: &Matrix3<f64>) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*m);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    [q.w, q.i, q.j, q.k]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_set() -> GaussianSet {
        let g = Gaussian {
            position: Vector3::new(0.1, 0.2, 2.0),
            scale: Vector3::new(0.01, 0.02, 0.03),
            rotation: [1.0, 0.0, 0.0, 0.0],
            color: [0.2, 0.4, 0.6],
            opacity: 0.5,
        };
        GaussianSet {
            grid_w: 2,
            grid_h: 2,
            scale_max: 0.1,
            gaussians: vec![g; 8],
        }
    }

    #[test]
    fn valid_set_has_no_violations() {
        assert!(unit_set().validate().is_empty());
    }

    #[test]
    fn zeroed_quaternion_is_reported() {
        let mut set = unit_set();
        set.gaussians[3].rotation = [0.0; 4];
        let v = set.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].attribute, "rotation");
        assert_eq!(v[0].index, 3);
        assert!(v[0].rule.contains("norm"));
    }

    #[test]
    fn opacity_out_of_range_is_reported_at_its_index() {
        let mut set = unit_set();
        set.gaussians[7].opacity = 1.5;
        let v = set.validate();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].attribute, v[0].index), ("opacity", 7));
    }

    #[test]
    fn count_is_layers_times_grid() {
        let set = unit_set();
        assert_eq!(set.count(), 2 * 2 * 2);
        assert_eq!(set.index(1, 1, 1), 7);
        assert_eq!(set.cell(7), (1, 1, 1));
    }

    #[test]
    fn extrinsics_reject_non_rigid_matrix() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 2.0;
        assert!(Extrinsics::new(m).is_err());
        let mut m = Matrix4::identity();
        m[(3, 0)] = 1.0;
        assert!(Extrinsics::new(m).is_err());
    }

    #[test]
    fn extrinsics_inverse_and_center() {
        let r = nalgebra::Rotation3::from_euler_angles(0.1, -0.3, 0.7).into_inner();
        let e = Extrinsics::looking_from(r, Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let prod = e.matrix() * e.inverse();
        assert!((prod - Matrix4::identity()).abs().max() < 1e-12);
        assert!((e.center() - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn quaternion_matrix_round_trip() {
        let r = nalgebra::Rotation3::from_euler_angles(0.4, 0.2, -1.1).into_inner();
        let q = matrix_to_quat(&r);
        assert!((quat_to_matrix(&q) - r).abs().max() < 1e-12);
        let p = quat_mul(&q, &[q[0], -q[1], -q[2], -q[3]]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn normalized_intrinsics_map_image_to_unit_square() {
        let k = Intrinsics::new(50.0, 40.0, 32.0, 24.0);
        let n = k.to_normalized(64, 48);
        let p = Vector3::new(0.3, -0.2, 2.0);
        let [u, v] = k.project(&p);
        let [un, vn] = n.project(&p);
        assert!((un - (u / 64.0 * 2.0 - 1.0)).abs() < 1e-12);
        assert!((vn - (v / 48.0 * 2.0 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn scale_map_stores_logs() {
        let s = ScaleMap::from_scales(2, 1, &[1.0, 2.0]).unwrap();
        assert_eq!(s.log_scale[0], 0.0);
        assert!((s.scale(1) - 2.0).abs() < 1e-15);
        assert!(ScaleMap::from_scales(1, 1, &[0.0]).is_err());
    }
}
