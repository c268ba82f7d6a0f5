//! EWA projection of 3D Gaussians to screen-space splats, and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use crate::camera::ComposedProjection;
use crate::scene::{quat_to_matrix, Gaussian, Intrinsics};

/// Gaussians at or closer than this depth (meters) are culled.
pub const ZNEAR: f64 = 1e-4;

/// Added to both diagonal entries of every screen-space covariance (px²).
pub const AA_DILATION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub center: [f64; 2],
    pub cov: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub view_depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub source_index: usize,
}

impl Splat2D {
    /// Largest eigenvalue of the screen covariance (px²).
    pub fn max_variance(&self) -> f64 {
        max_eigen(&self.cov).0
    }
}

/// Largest eigenvalue of a symmetric 2x2 matrix and its unit eigenvector.
pub fn max_eigen(m: &Matrix2<f64>) -> (f64, [f64; 2]) {
    let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let half = 0.5 * (a - c);
    let r = (half * half + b * b).sqrt();
    let lambda = 0.5 * (a + c) + r;
    let v = if r == 0.0 {
        [1.0, 0.0]
    } else if half >= 0.0 {
        let (x, y) = (half + r, b);
        let n = (x * x + y * y).sqrt();
        [x / n, y / n]
    } else {
        let (x, y) = (b, r - half);
        let n = (x * x + y * y).sqrt();
        [x / n, y / n]
    };
    (lambda, v)
}

/// Everything the adjoint needs from one forward projection.
#[derive(Debug, Clone)]
pub struct Projected {
    pub splat: Splat2D,
    mean: Vector3<f64>,
    rot: Matrix3<f64>,
    qhat: [f64; 4],
    qnorm: f64,
    scale: Vector3<f64>,
    sigma_cam: Matrix3<f64>,
    jac: Matrix2x3<f64>,
}

/// Upstream gradient for one splat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatGrad {
    pub center: [f64; 2],
    /// Gradient w.r.t. the screen covariance; symmetric.
    pub cov: Matrix2<f64>,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Gradient w.r.t. `1 / view_depth`.
    pub inv_depth: f64,
}

impl Default for SplatGrad {
    fn default() -> Self {
        Self {
            center: [0.0; 2],
            cov: Matrix2::zeros(),
            color: [0.0; 3],
            opacity: 0.0,
            inv_depth: 0.0,
        }
    }
}

impl SplatGrad {
    pub fn add(&mut self, o: &SplatGrad) {
        self.center[0] += o.center[0];
        self.center[1] += o.center[1];
        self.cov += o.cov;
        for c in 0..3 {
            self.color[c] += o.color[c];
        }
        self.opacity += o.opacity;
        self.inv_depth += o.inv_depth;
    }
}

fn jacobian(k: &Intrinsics, m: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / m.z;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * m.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * m.y * iz * iz,
    )
}

fn splat_from_parts(
    k: &Intrinsics,
    m: &Vector3<f64>,
    sigma_cam: &Matrix3<f64>,
    g: &Gaussian,
    index: usize,
) -> Option<(Splat2D, Matrix2x3<f64>)> {
    if !(m.z > ZNEAR) || !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    let jac = jacobian(k, m);
    let cov = jac * sigma_cam * jac.transpose() + Matrix2::identity() * AA_DILATION;
    let conic = cov.try_inverse()?;
    if !conic.iter().all(|v| v.is_finite()) {
        return None;
    }
    let [u, v] = k.project(m);
    Some((
        Splat2D {
            center: [u, v],
            cov,
            conic,
            view_depth: m.z,
            color: g.color,
            opacity: g.opacity,
            source_index: index,
        },
        jac,
    ))
}

/// Projects a Gaussian already expressed in camera space.
pub fn project_splat(g: &Gaussian, k: &Intrinsics) -> Option<Splat2D> {
    let sigma = crate::camera::covariance(g);
    splat_from_parts(k, &g.position, &sigma, g, 0).map(|(s, _)| s)
}

/// Projects a normalized-space Gaussian through `proj`.
pub fn project_gaussian(g: &Gaussian, proj: &ComposedProjection, index: usize) -> Option<Projected> {
    let mean = proj.to_camera(&g.position);
    let qnorm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(qnorm > 0.0) {
        return None;
    }
    let qhat = g.rotation.map(|v| v / qnorm);
    let rot = quat_to_matrix(&qhat);
    let d = Matrix3::from_diagonal(&g.scale.component_mul(&g.scale));
    let w = proj.rigid_rotation();
    let sigma_cam = w * rot * d * rot.transpose() * w.transpose();
    let (splat, jac) = splat_from_parts(proj.target_intrinsics(), &mean, &sigma_cam, g, index)?;
    Some(Projected {
        splat,
        mean,
        rot,
        qhat,
        qnorm,
        scale: g.scale,
        sigma_cam,
        jac,
    })
}

impl Projected {
    /// Chains a splat gradient back to the normalized-space Gaussian attributes.
    pub fn backward(&self, up: &SplatGrad, proj: &ComposedProjection) -> Gaussian {
        let k = proj.target_intrinsics();
        let m = self.mean;
        let iz = 1.0 / m.z;
        let iz2 = iz * iz;

        // center and inverse depth
        let mut d_mean = Vector3::new(
            up.center[0] * k.fx * iz,
            up.center[1] * k.fy * iz,
            -(up.center[0] * k.fx * m.x + up.center[1] * k.fy * m.y) * iz2 - up.inv_depth * iz2,
        );

        // screen covariance = J Σc Jᵀ + dilation
        let g2 = 0.5 * (up.cov + up.cov.transpose());
        let d_sigma_cam = self.jac.transpose() * g2 * self.jac;
        let d_jac = 2.0 * g2 * self.jac * self.sigma_cam;
        d_mean.x += d_jac[(0, 2)] * (-k.fx * iz2);
        d_mean.y += d_jac[(1, 2)] * (-k.fy * iz2);
        d_mean.z += d_jac[(0, 0)] * (-k.fx * iz2)
            + d_jac[(1, 1)] * (-k.fy * iz2)
            + d_jac[(0, 2)] * (2.0 * k.fx * m.x * iz2 * iz)
            + d_jac[(1, 2)] * (2.0 * k.fy * m.y * iz2 * iz);

        let d_position = proj.view_linear().transpose() * d_mean;

        // Σc = W R D Rᵀ Wᵀ
        let w = proj.rigid_rotation();
        let d_sigma = w.transpose() * d_sigma_cam * w;
        let d_sigma = 0.5 * (d_sigma + d_sigma.transpose());
        let r = &self.rot;
        let inner = r.transpose() * d_sigma * r;
        let s = &self.scale;
        let d_scale = Vector3::new(
            2.0 * s.x * inner[(0, 0)],
            2.0 * s.y * inner[(1, 1)],
            2.0 * s.z * inner[(2, 2)],
        );
        let dd = Matrix3::from_diagonal(&s.component_mul(s));
        let d_rot = 2.0 * d_sigma * r * dd;
        let d_qhat = quat_matrix_vjp(&self.qhat, &d_rot);
        let dot: f64 = (0..4).map(|i| d_qhat[i] * self.qhat[i]).sum();
        let d_q = std::array::from_fn(|i| (d_qhat[i] - self.qhat[i] * dot) / self.qnorm);

        Gaussian {
            position: d_position,
            scale: d_scale,
            rotation: d_q,
            color: up.color,
            opacity: up.opacity,
        }
    }
}

/// Vector-Jacobian product of [`quat_to_matrix`] at `q = (w, x, y, z)`.
pub fn quat_matrix_vjp(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let g = |r: usize, c: usize| g[(r, c)];
    [
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)),
        2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2)),
        2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2)),
        2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1)),
    ]
}
