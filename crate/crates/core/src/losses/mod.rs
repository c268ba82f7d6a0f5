//! Training objectives: image data terms, geometric regularizers and the
//! depth-adjustment penalties, plus their weighted total.

mod image;
mod perceptual;
mod regularizers;

pub use image::{alpha_loss, color_loss, masked_l1, ViewGrads};
pub use perceptual::{gram_matrix, perceptual_loss, FeatureExtractor, FeatureMap, PyramidExtractor, PERCEPTUAL_LEVELS};
pub use regularizers::{
    delta_reg, depth_loss, floater_grad_reg, scale_map_regs, splat_size_reg, total_variation, tv_second_layer,
    FloaterTerm, ScaleRegs, SCALE_PYRAMID_LEVELS,
};

use serde::{Deserialize, Serialize};

/// Term weights and the constants of the hinge and floater penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub color: f64,
    pub alpha: f64,
    pub percep: f64,
    pub depth: f64,
    pub tv: f64,
    pub grad: f64,
    pub delta: f64,
    pub splat: f64,
    pub scale: f64,
    pub grad_scale: f64,
    /// Floater falloff σ.
    pub floater_sigma: f64,
    /// Floater disparity-gradient threshold ε.
    pub floater_epsilon: f64,
    /// Allowed |Δ| on the normalized x/y position deltas.
    pub delta_bound: f64,
    /// Bounds on the largest screen-space variance (px²).
    pub splat_sigma_min: f64,
    pub splat_sigma_max: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            color: 1.0,
            alpha: 1.0,
            percep: 3.0,
            depth: 0.2,
            tv: 1.0,
            grad: 0.5,
            delta: 1.0,
            splat: 1.0,
            scale: 0.1,
            grad_scale: 5.0,
            floater_sigma: 1e-2,
            floater_epsilon: 1e-2,
            delta_bound: 400.0,
            splat_sigma_min: 0.1,
            splat_sigma_max: 100.0,
        }
    }
}

impl LossWeights {
    pub fn check(&self) -> crate::Result<()> {
        let all = [
            ("color", self.color),
            ("alpha", self.alpha),
            ("percep", self.percep),
            ("depth", self.depth),
            ("tv", self.tv),
            ("grad", self.grad),
            ("delta", self.delta),
            ("splat", self.splat),
            ("scale", self.scale),
            ("grad_scale", self.grad_scale),
            ("floater_sigma", self.floater_sigma),
            ("floater_epsilon", self.floater_epsilon),
            ("delta_bound", self.delta_bound),
            ("splat_sigma_min", self.splat_sigma_min),
            ("splat_sigma_max", self.splat_sigma_max),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(crate::Error::InvalidConfig(format!("weight {name} must be finite and >= 0, got {v}")));
            }
        }
        if self.floater_sigma == 0.0 {
            return Err(crate::Error::InvalidConfig("floater_sigma must be > 0".into()));
        }
        Ok(())
    }

    /// Sets one term weight or constant by its field name.
    pub fn set(&mut self, name: &str, value: f64) -> crate::Result<()> {
        let slot = match name {
            "color" => &mut self.color,
            "alpha" => &mut self.alpha,
            "percep" => &mut self.percep,
            "depth" => &mut self.depth,
            "tv" => &mut self.tv,
            "grad" => &mut self.grad,
            "delta" => &mut self.delta,
            "splat" => &mut self.splat,
            "scale" => &mut self.scale,
            "grad_scale" => &mut self.grad_scale,
            "floater_sigma" => &mut self.floater_sigma,
            "floater_epsilon" => &mut self.floater_epsilon,
            "delta_bound" => &mut self.delta_bound,
            "splat_sigma_min" => &mut self.splat_sigma_min,
            "splat_sigma_max" => &mut self.splat_sigma_max,
            _ => return Err(crate::Error::InvalidConfig(format!("unknown loss weight `{name}`"))),
        };
        *slot = value;
        self.check()
    }
}

/// Unweighted values of every term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub color: f64,
    pub alpha: f64,
    pub percep: f64,
    pub depth: f64,
    pub tv: f64,
    pub grad: f64,
    pub delta: f64,
    pub splat: f64,
    pub scale: f64,
    pub grad_scale: f64,
}

impl LossParts {
    pub fn splat_all(v: f64) -> Self {
        Self {
            color: v,
            alpha: v,
            percep: v,
            depth: v,
            tv: v,
            grad: v,
            delta: v,
            splat: v,
            scale: v,
            grad_scale: v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermGroup {
    Data,
    Regularizer,
    Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermReport {
    pub name: &'static str,
    pub raw: f64,
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub terms: Vec<TermReport>,
    /// Weighted color + alpha + depth + perceptual.
    pub data: f64,
    /// Weighted TV + floater + delta + splat-size.
    pub regularizer: f64,
    /// Weighted scale-map terms.
    pub scale: f64,
    pub total: f64,
}

impl LossReport {
    pub fn term(&self, name: &str) -> Option<&TermReport> {
        self.terms.iter().find(|t| t.name == name)
    }
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> LossReport {
    use TermGroup::*;
    let rows = [
        ("color", Data, parts.color, w.color),
        ("alpha", Data, parts.alpha, w.alpha),
        ("depth", Data, parts.depth, w.depth),
        ("percep", Data, parts.percep, w.percep),
        ("tv", Regularizer, parts.tv, w.tv),
        ("grad", Regularizer, parts.grad, w.grad),
        ("delta", Regularizer, parts.delta, w.delta),
        ("splat", Regularizer, parts.splat, w.splat),
        ("scale", Scale, parts.scale, w.scale),
        ("grad_scale", Scale, parts.grad_scale, w.grad_scale),
    ];
    let mut sums = [0.0; 3];
    let mut terms = Vec::with_capacity(rows.len());
    for (name, group, raw, weight) in rows {
        let weighted = raw * weight;
        sums[group as usize] += weighted;
        terms.push(TermReport { name, raw, weighted });
    }
    LossReport {
        terms,
        data: sums[0],
        regularizer: sums[1],
        scale: sums[2],
        total: sums[0] + sums[1] + sums[2],
    }
}
