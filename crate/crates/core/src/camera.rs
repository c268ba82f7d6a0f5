//! Composed projection `P = K_tgt · E_tgt · E_src⁻¹ · K_src⁻¹` taking
//! Gaussians from the source view's normalized space into a target view.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::Result;
use crate::scene::{matrix_to_quat, quat_mul, Camera, Extrinsics, Gaussian, Intrinsics};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposedProjection {
    pub matrix: Matrix4<f64>,
    pub source: (Intrinsics, Extrinsics),
    pub target: (Intrinsics, Extrinsics),
    /// `E_tgt · E_src⁻¹ · K_src⁻¹`: normalized space to target camera space.
    view: Matrix4<f64>,
    /// Rotation block of `E_tgt · E_src⁻¹`.
    rotation: Matrix3<f64>,
}

/// Builds `P` from the literal four factors.
pub fn compose_projection(src: (Intrinsics, Extrinsics), tgt: (Intrinsics, Extrinsics)) -> Result<ComposedProjection> {
    let k_src_inv = src.0.inverse_matrix4()?;
    // fails for a singular target too, even though only K_tgt itself is used
    tgt.0.inverse_matrix4()?;
    let rigid = tgt.1.matrix() * src.1.inverse();
    let view = rigid * k_src_inv;
    let matrix = tgt.0.matrix4() * view;
    Ok(ComposedProjection {
        matrix,
        source: src,
        target: tgt,
        view,
        rotation: rigid.fixed_view::<3, 3>(0, 0).into_owned(),
    })
}

impl ComposedProjection {
    /// Projection for Gaussians built from `src`'s image, where positions
    /// use normalized image coordinates in `[-1, 1]`.
    pub fn for_views(src: &Camera, tgt: &Camera) -> Result<Self> {
        compose_projection(
            (src.intrinsics.to_normalized(src.width, src.height), src.extrinsics),
            (tgt.intrinsics, tgt.extrinsics),
        )
    }

    /// Projection that only applies `K_tgt` (identity source and extrinsics).
    pub fn intrinsics_only(k: Intrinsics) -> Result<Self> {
        compose_projection(
            (Intrinsics::unit(), Extrinsics::identity()),
            (k, Extrinsics::identity()),
        )
    }

    pub fn target_intrinsics(&self) -> &Intrinsics {
        &self.target.0
    }

    pub fn view_matrix(&self) -> &Matrix4<f64> {
        &self.view
    }

    /// Linear part of the view map (rows of `E_tgt E_src⁻¹ K_src⁻¹`).
    pub fn view_linear(&self) -> Matrix3<f64> {
        self.view.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn rigid_rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    /// Target camera-space position of a normalized-space point.
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.view * Vector4::new(p.x, p.y, p.z, 1.0)).xyz()
    }

    /// Target pixel coordinates and depth of a normalized-space point, via `P`.
    pub fn project_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let h = self.matrix * Vector4::new(p.x, p.y, p.z, 1.0);
        Vector3::new(h.x / h.z, h.y / h.z, h.z)
    }
}

/// Moves a Gaussian into target camera space: position by the full view map,
/// orientation by the rigid rotation. Returns `None` when the result lies on
/// or behind the camera plane.
pub fn transform_gaussian(g: &Gaussian, proj: &ComposedProjection) -> Option<Gaussian> {
    let position = proj.to_camera(&g.position);
    if !(position.z > 0.0) {
        return None;
    }
    let r = matrix_to_quat(proj.rigid_rotation());
    let q = quat_mul(&r, &g.rotation);
    Some(Gaussian {
        position,
        rotation: q,
        ..*g
    })
}

/// Covariance `R diag(s²) Rᵀ` of a Gaussian.
pub fn covariance(g: &Gaussian) -> Matrix3<f64> {
    let n = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r = crate::scene::quat_to_matrix(&g.rotation.map(|v| v / n));
    let d = Matrix3::from_diagonal(&g.scale.component_mul(&g.scale));
    r * d * r.transpose()
}
