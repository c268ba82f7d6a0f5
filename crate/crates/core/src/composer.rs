//! Combines base Gaussians with raw refinements through attribute-specific
//! activations: `out = γ(γ⁻¹(base) + η·Δ)`.
//!
//! Positions are updated in `(x/z, y/z, 1/z)` and mapped back afterwards.
//! Scale is divided by the set's `scale_max` before the sigmoid inverse and
//! multiplied back after, so metric scales of any magnitude stay in the
//! sigmoid's domain. Quaternions are renormalized after the update.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{DeltaSet, Gaussian, GaussianSet};

/// Sigmoid attributes are kept in `[EPS, 1 - EPS]`, both before the inverse
/// and after the forward map (where the clamp stops the gradient).
pub const SIGMOID_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Softplus,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn forward(self, t: f64) -> f64 {
        match self {
            Activation::Identity => t,
            Activation::Softplus => softplus(t),
            Activation::Sigmoid => sigmoid(t),
        }
    }

    /// Inverse, or `None` outside the codomain.
    #[inline]
    pub fn inverse(self, y: f64) -> Option<f64> {
        match self {
            Activation::Identity => y.is_finite().then_some(y),
            Activation::Softplus => (y.is_finite() && y > 0.0).then(|| softplus_inv(y)),
            Activation::Sigmoid => (y.is_finite() && (0.0..=1.0).contains(&y)).then(|| logit(y)),
        }
    }

    #[inline]
    pub fn derivative(self, t: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Softplus => sigmoid(t),
            Activation::Sigmoid => {
                let s = sigmoid(t);
                s * (1.0 - s)
            }
        }
    }
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logit of a value clamped into `[SIGMOID_CLAMP, 1 - SIGMOID_CLAMP]`.
#[inline]
pub fn logit(y: f64) -> f64 {
    let y = y.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP);
    (y / (1.0 - y)).ln()
}

#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t + (-t).exp()
    } else {
        t.exp().ln_1p()
    }
}

/// `ln(exp(y) - 1)`, the inverse of softplus for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Activation and delta scale for one attribute group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeActivation {
    pub activation: Activation,
    pub eta: f64,
}

const fn act(activation: Activation, eta: f64) -> AttributeActivation {
    AttributeActivation { activation, eta }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationSpec {
    /// Applied to `x/z` and `y/z`.
    pub position_xy: AttributeActivation,
    /// Applied to `1/z`.
    pub position_inv_depth: AttributeActivation,
    pub color: AttributeActivation,
    pub rotation: AttributeActivation,
    pub scale: AttributeActivation,
    pub opacity: AttributeActivation,
}

impl Default for ActivationSpec {
    fn default() -> Self {
        Self {
            position_xy: act(Activation::Identity, 1e-3),
            position_inv_depth: act(Activation::Softplus, 1e-3),
            color: act(Activation::Sigmoid, 1e-1),
            rotation: act(Activation::Identity, 1.0),
            scale: act(Activation::Sigmoid, 1.0),
            opacity: act(Activation::Sigmoid, 1.0),
        }
    }
}

/// Per-scalar composition record: pre-activation input and output arguments.
#[derive(Debug, Clone, Copy)]
struct Step {
    t_in: f64,
    t_out: f64,
    /// False when the base value was clamped before the inverse.
    passes_base: bool,
    /// True when a sigmoid output was clamped away from 0 or 1.
    saturated: bool,
}

fn step(a: AttributeActivation, base: f64, delta: f64, attribute: &'static str, index: usize) -> Result<(f64, Step)> {
    let t_in = a.activation.inverse(base).ok_or(Error::ActivationDomain {
        attribute,
        index,
        value: base,
    })?;
    let passes_base = match a.activation {
        Activation::Sigmoid => (SIGMOID_CLAMP..=1.0 - SIGMOID_CLAMP).contains(&base),
        _ => true,
    };
    let t_out = t_in + a.eta * delta;
    let raw = a.activation.forward(t_out);
    let (y, saturated) = match a.activation {
        Activation::Sigmoid => {
            let y = raw.clamp(SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP);
            (y, y != raw)
        }
        _ => (raw, false),
    };
    Ok((
        y,
        Step {
            t_in,
            t_out,
            passes_base,
            saturated,
        },
    ))
}

impl Step {
    /// `(d out / d delta, d out / d base)`.
    fn partials(&self, a: AttributeActivation) -> (f64, f64) {
        if self.saturated {
            return (0.0, 0.0);
        }
        let d_out = a.activation.derivative(self.t_out);
        let d_base = if self.passes_base {
            d_out / a.activation.derivative(self.t_in)
        } else {
            0.0
        };
        (d_out * a.eta, d_base)
    }
}

fn check_shapes(base: &GaussianSet, delta: &DeltaSet) -> Result<()> {
    if base.gaussians.len() != delta.values.len() || base.grid_w != delta.grid_w || base.grid_h != delta.grid_h {
        return Err(Error::DimensionMismatch(format!(
            "base has {} gaussians on a {}x{} grid, delta has {} on {}x{}",
            base.gaussians.len(),
            base.grid_w,
            base.grid_h,
            delta.values.len(),
            delta.grid_w,
            delta.grid_h
        )));
    }
    Ok(())
}

fn scale_max_of(base: &GaussianSet) -> Result<f64> {
    if base.scale_max.is_finite() && base.scale_max > 0.0 {
        Ok(base.scale_max)
    } else {
        Err(Error::InvalidConfig(format!(
            "scale_max must be > 0, got {}",
            base.scale_max
        )))
    }
}

struct Composed {
    out: Gaussian,
    pos: [Step; 3],
    scale: [Step; 3],
    color: [Step; 3],
    opacity: Step,
    /// Unnormalized updated quaternion.
    rot_raw: [f64; 4],
    rot_steps: [Step; 4],
}

fn compose_one(g: &Gaussian, d: &Gaussian, spec: &ActivationSpec, scale_max: f64, index: usize) -> Result<Composed> {
    let z = g.position.z;
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::NonPositiveDepth { index, value: z });
    }
    let ndc = [g.position.x / z, g.position.y / z, 1.0 / z];
    let (a, sa) = step(spec.position_xy, ndc[0], d.position.x, "position", index)?;
    let (b, sb) = step(spec.position_xy, ndc[1], d.position.y, "position", index)?;
    let (w, sw) = step(spec.position_inv_depth, ndc[2], d.position.z, "position", index)?;
    if !(w.is_finite() && w > 0.0) {
        return Err(Error::NonPositiveDepth { index, value: 1.0 / w });
    }
    let position = Vector3::new(a / w, b / w, 1.0 / w);

    let mut scale = Vector3::zeros();
    let mut scale_steps = [Step {
        t_in: 0.0,
        t_out: 0.0,
        passes_base: true,
        saturated: false,
    }; 3];
    for k in 0..3 {
        let (s, st) = step(spec.scale, g.scale[k] / scale_max, d.scale[k], "scale", index)?;
        scale[k] = s * scale_max;
        scale_steps[k] = st;
    }

    let mut color = [0.0; 3];
    let mut color_steps = scale_steps;
    for k in 0..3 {
        let (c, st) = step(spec.color, g.color[k], d.color[k], "color", index)?;
        color[k] = c;
        color_steps[k] = st;
    }

    let (opacity, op_step) = step(spec.opacity, g.opacity, d.opacity, "opacity", index)?;

    let mut rot_raw = [0.0; 4];
    let mut rot_steps = [op_step; 4];
    for k in 0..4 {
        let (r, st) = step(spec.rotation, g.rotation[k], d.rotation[k], "rotation", index)?;
        rot_raw[k] = r;
        rot_steps[k] = st;
    }
    let norm = rot_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::ActivationDomain {
            attribute: "rotation",
            index,
            value: norm,
        });
    }
    let rotation = rot_raw.map(|v| v / norm);

    Ok(Composed {
        out: Gaussian {
            position,
            scale,
            rotation,
            color,
            opacity,
        },
        pos: [sa, sb, sw],
        scale: scale_steps,
        color: color_steps,
        opacity: op_step,
        rot_raw,
        rot_steps,
    })
}

/// Applies `delta` to `base`. The result carries the base's `scale_max`.
pub fn compose(base: &GaussianSet, delta: &DeltaSet, spec: &ActivationSpec) -> Result<GaussianSet> {
    check_shapes(base, delta)?;
    let scale_max = scale_max_of(base)?;
    let gaussians = base
        .gaussians
        .iter()
        .zip(&delta.values)
        .enumerate()
        .map(|(i, (g, d))| compose_one(g, d, spec, scale_max, i).map(|c| c.out))
        .collect::<Result<Vec<_>>>()?;
    Ok(GaussianSet {
        gaussians,
        ..base.clone()
    })
}

/// Gradients of a loss w.r.t. the delta and the base, given its gradient
/// w.r.t. the composed set.
#[derive(Debug, Clone)]
pub struct ComposeGrads {
    pub d_delta: Vec<Gaussian>,
    /// Only position and scale entries are populated; the other base
    /// attributes are constants of the pipeline.
    pub d_base: Vec<Gaussian>,
}

pub fn compose_backward(
    base: &GaussianSet,
    delta: &DeltaSet,
    spec: &ActivationSpec,
    d_out: &[Gaussian],
) -> Result<ComposeGrads> {
    check_shapes(base, delta)?;
    let scale_max = scale_max_of(base)?;
    let mut d_delta = Vec::with_capacity(d_out.len());
    let mut d_base = Vec::with_capacity(d_out.len());
    for (i, ((g, d), up)) in base.gaussians.iter().zip(&delta.values).zip(d_out).enumerate() {
        let c = compose_one(g, d, spec, scale_max, i)?;
        let mut dd = Gaussian::zeros();
        let mut db = Gaussian::zeros();

        // position: out = (a'/w', b'/w', 1/w')
        let w = 1.0 / c.out.position.z;
        let a = c.out.position.x * w;
        let b = c.out.position.y * w;
        let g_a = up.position.x / w;
        let g_b = up.position.y / w;
        let g_w = -(up.position.x * a + up.position.y * b + up.position.z) / (w * w);
        let (da_dd, da_db) = c.pos[0].partials(spec.position_xy);
        let (db_dd, db_db) = c.pos[1].partials(spec.position_xy);
        let (dw_dd, dw_db) = c.pos[2].partials(spec.position_inv_depth);
        dd.position = Vector3::new(g_a * da_dd, g_b * db_dd, g_w * dw_dd);
        let (gx0, gy0, gw0) = (g_a * da_db, g_b * db_db, g_w * dw_db);
        let z0 = g.position.z;
        db.position = Vector3::new(
            gx0 / z0,
            gy0 / z0,
            -(gx0 * g.position.x + gy0 * g.position.y + gw0) / (z0 * z0),
        );

        for k in 0..3 {
            let (dd_s, db_s) = c.scale[k].partials(spec.scale);
            dd.scale[k] = up.scale[k] * dd_s * scale_max;
            db.scale[k] = up.scale[k] * db_s;
            let (dd_c, _) = c.color[k].partials(spec.color);
            dd.color[k] = up.color[k] * dd_c;
        }
        let (dd_o, _) = c.opacity.partials(spec.opacity);
        dd.opacity = up.opacity * dd_o;

        let norm = c.rot_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q = c.out.rotation;
        let dot: f64 = (0..4).map(|k| q[k] * up.rotation[k]).sum();
        for k in 0..4 {
            let g_raw = (up.rotation[k] - q[k] * dot) / norm;
            let (dd_r, _) = c.rot_steps[k].partials(spec.rotation);
            dd.rotation[k] = g_raw * dd_r;
        }
        d_delta.push(dd);
        d_base.push(db);
    }
    Ok(ComposeGrads { d_delta, d_base })
}
