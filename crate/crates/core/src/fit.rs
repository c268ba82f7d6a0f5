//! Desk-scale optimization of a delta set (and optionally the depth scale
//! map) against rendered losses on an input view and any novel views.

use std::io::Write;
use std::time::{Duration, Instant};

use crate::camera::ComposedProjection;
use crate::composer::{compose, compose_backward, ActivationSpec};
use crate::depth::{apply_scale_map, apply_scale_map_backward, frustum_mask, FrustumMask, FRUSTUM_BOUND};
use crate::error::{Error, Result};
use crate::initializer::{average_pool, downsample_depth, init_backward, init_gaussians, InitConfig};
use crate::losses::{self, total_loss, FeatureExtractor, LossParts, LossReport, LossWeights, PyramidExtractor};
use crate::render::{render, Frame, RenderGrad, Viewport};
use crate::scene::{Camera, DeltaSet, Gaussian, GaussianSet, ImageRgb, LayeredDepthMap, ScaleMap, ATTRIBUTES, LAYERS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_steps: usize,
    pub weights: LossWeights,
    pub optimize_scale_map: bool,
    pub init: InitConfig,
    pub activation: ActivationSpec,
    pub adam: AdamConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr_peak: 0.1,
            lr_final: 0.01,
            warmup_steps: 25,
            weights: LossWeights::default(),
            optimize_scale_map: false,
            init: InitConfig::default(),
            activation: ActivationSpec::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl FitConfig {
    /// The long network-training schedule: 10k warmup steps to 1.6e-4, cosine
    /// decay to 1.6e-5 at step 100k. The default is a short desk-scale run.
    pub fn training_schedule() -> Self {
        Self {
            steps: 100_000,
            warmup_steps: 10_000,
            lr_peak: 1.6e-4,
            lr_final: 1.6e-5,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.lr_final > 0.0 && self.lr_peak >= self.lr_final && self.lr_peak.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "need lr_peak >= lr_final > 0, got {} and {}",
                self.lr_peak, self.lr_final
            )));
        }
        if self.steps > 0 && self.warmup_steps >= self.steps {
            return Err(Error::InvalidConfig(format!(
                "warmup ({}) must be shorter than the run ({} steps)",
                self.warmup_steps, self.steps
            )));
        }
        self.weights.check()?;
        self.init.check()
    }

    /// Linear warmup from 0 to `lr_peak`, then cosine decay to `lr_final` at `steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr_peak * step as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let t = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.lr_final + 0.5 * (self.lr_peak - self.lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// A supervised view: where to render and what it should look like.
#[derive(Debug, Clone, PartialEq)]
pub struct FitView {
    pub camera: Camera,
    pub target: ImageRgb,
    /// Target-view depth for frustum masking; the initial scene's rendered
    /// depth is used when absent.
    pub depth: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    TargetDepth,
    RenderedInitial,
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    /// Camera whose normalized image space the Gaussians live in.
    pub frame: Camera,
    /// Source image, used for initialization.
    pub image: ImageRgb,
    /// Predicted two-layer depth at the frame camera's resolution.
    pub depth: Option<LayeredDepthMap>,
    /// Supervision for the depth term; defaults to the first predicted layer.
    pub depth_target: Option<Vec<f64>>,
    /// Start from this set instead of initializing from `depth`.
    pub base: Option<GaussianSet>,
    /// Rendered without a mask.
    pub input: FitView,
    pub novel: Vec<FitView>,
}

impl FitProblem {
    /// Input view is the source image seen from `camera`.
    pub fn new(image: ImageRgb, depth: LayeredDepthMap, camera: Camera, novel: Vec<FitView>) -> Self {
        Self {
            frame: camera,
            input: FitView {
                camera,
                target: image.clone(),
                depth: None,
            },
            image,
            depth: Some(depth),
            depth_target: None,
            base: None,
            novel,
        }
    }

    /// Refines an existing set; depth-based terms are inactive.
    pub fn from_base(base: GaussianSet, camera: Camera, image: ImageRgb, novel: Vec<FitView>) -> Self {
        Self {
            frame: camera,
            input: FitView {
                camera,
                target: image.clone(),
                depth: None,
            },
            image,
            depth: None,
            depth_target: None,
            base: Some(base),
            novel,
        }
    }

    /// Fine-tuning problem from a swapped pair: the pseudo-view rendering is
    /// the input, the real photograph supervises the source view.
    pub fn from_ssft_pair(model: GaussianSet, pair: &SsftPair) -> Self {
        Self {
            frame: pair.target_camera,
            image: pair.target.clone(),
            depth: None,
            depth_target: None,
            base: Some(model),
            input: FitView {
                camera: pair.input_camera,
                target: pair.input.clone(),
                depth: None,
            },
            novel: vec![FitView {
                camera: pair.target_camera,
                target: pair.target.clone(),
                depth: None,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub report: LossReport,
}

#[derive(Debug, Clone)]
pub struct FitTrace {
    /// One record per optimizer step, evaluated before that step's update.
    pub records: Vec<StepRecord>,
    /// Losses at the returned parameters.
    pub final_report: LossReport,
    pub final_set: GaussianSet,
    pub delta: DeltaSet,
    pub scale_map: ScaleMap,
    pub mask_sources: Vec<MaskSource>,
    pub wall_time: Duration,
}

const TERMS: [&str; 10] = [
    "color",
    "alpha",
    "percep",
    "depth",
    "tv",
    "grad",
    "delta",
    "splat",
    "scale",
    "grad_scale",
];

impl FitTrace {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "step,lr,{},data,total", TERMS.join(","))?;
        for r in &self.records {
            write!(out, "{},{}", r.step, r.lr)?;
            for name in TERMS {
                write!(out, ",{}", r.report.term(name).map_or(0.0, |t| t.raw))?;
            }
            writeln!(out, ",{},{}", r.report.data, r.report.total)?;
        }
        Ok(())
    }
}

/// Per-step state that depends on the scale map.
struct Geometry {
    adjusted: Option<LayeredDepthMap>,
    argmin: Option<[Vec<usize>; LAYERS]>,
    base: GaussianSet,
}

struct Evaluation {
    report: LossReport,
    composed: GaussianSet,
    d_delta: Vec<Gaussian>,
    d_log_scale: Option<Vec<f64>>,
}

struct Problem<'a> {
    p: &'a FitProblem,
    cfg: &'a FitConfig,
    image_small: Option<ImageRgb>,
    scale_max: f64,
    s0: f64,
    depth_target: Option<Vec<f64>>,
    input_proj: ComposedProjection,
    novel_proj: Vec<ComposedProjection>,
    masks: Vec<FrustumMask>,
    fixed: Option<GaussianSet>,
    extractor: PyramidExtractor,
}

fn viewport(c: &Camera) -> Viewport {
    Viewport::new(c.width, c.height)
}

fn check_view(v: &FitView) -> Result<()> {
    if (v.target.width, v.target.height) != (v.camera.width, v.camera.height) {
        return Err(Error::DimensionMismatch(format!(
            "target image is {}x{}, camera is {}x{}",
            v.target.width, v.target.height, v.camera.width, v.camera.height
        )));
    }
    v.target.check_range()
}

impl<'a> Problem<'a> {
    fn new(p: &'a FitProblem, cfg: &'a FitConfig) -> Result<Self> {
        cfg.check()?;
        check_view(&p.input)?;
        for v in &p.novel {
            check_view(v)?;
        }
        if p.base.is_some() && cfg.optimize_scale_map {
            return Err(Error::InvalidConfig(
                "the scale map can only be optimized when fitting from depth".into(),
            ));
        }
        let input_proj = ComposedProjection::for_views(&p.frame, &p.input.camera)?;
        let novel_proj = p
            .novel
            .iter()
            .map(|v| ComposedProjection::for_views(&p.frame, &v.camera))
            .collect::<Result<Vec<_>>>()?;

        let prob = match (&p.base, &p.depth) {
            (Some(base), _) => Self {
                p,
                cfg,
                image_small: None,
                scale_max: base.scale_max,
                s0: 0.0,
                depth_target: None,
                input_proj,
                novel_proj,
                masks: vec![],
                fixed: Some(base.clone()),
                extractor: PyramidExtractor::default(),
            },
            (None, Some(depth)) => {
                if !p.image.same_dims(depth) {
                    return Err(Error::DimensionMismatch(format!(
                        "image is {}x{}, depth is {}x{}",
                        p.image.width, p.image.height, depth.width, depth.height
                    )));
                }
                depth.check()?;
                let f = cfg.init.downsample_factor;
                let image_small = average_pool(&p.image, f)?;
                let (depth_small, _) = downsample_depth(depth, f)?;
                let g0 = init_gaussians(&image_small, &depth_small, &cfg.init)?;
                let depth_target = p.depth_target.clone().unwrap_or_else(|| depth.layers[0].clone());
                if depth_target.len() != depth.layers[0].len() {
                    return Err(Error::DimensionMismatch("depth target size".into()));
                }
                Self {
                    p,
                    cfg,
                    s0: cfg.init.s0_for(image_small.width, image_small.height),
                    image_small: Some(image_small),
                    scale_max: g0.scale_max,
                    depth_target: Some(depth_target),
                    input_proj,
                    novel_proj,
                    masks: vec![],
                    fixed: (!cfg.optimize_scale_map).then_some(g0),
                    extractor: PyramidExtractor::default(),
                }
            }
            (None, None) => {
                return Err(Error::InvalidConfig("fit needs either a base set or a depth map".into()));
            }
        };
        prob.with_masks()
    }

    fn with_masks(mut self) -> Result<Self> {
        let mut initial: Option<GaussianSet> = None;
        let mut masks = Vec::with_capacity(self.p.novel.len());
        for (v, proj) in self.p.novel.iter().zip(&self.novel_proj) {
            let depth = match &v.depth {
                Some(d) => d.clone(),
                None => {
                    if initial.is_none() {
                        let geo = self.geometry(&ScaleMap::identity(1, 1), false)?;
                        initial = Some(geo.base);
                    }
                    let out = render(initial.as_ref().unwrap(), proj, viewport(&v.camera));
                    out.inv_depth.data.iter().map(|&i| if i > 0.0 { 1.0 / i } else { 0.0 }).collect()
                }
            };
            masks.push(frustum_mask(&v.camera, &self.p.input.camera, &depth, FRUSTUM_BOUND)?);
        }
        self.masks = masks;
        Ok(self)
    }

    fn mask_sources(&self) -> Vec<MaskSource> {
        self.p
            .novel
            .iter()
            .map(|v| {
                if v.depth.is_some() {
                    MaskSource::TargetDepth
                } else {
                    MaskSource::RenderedInitial
                }
            })
            .collect()
    }

    fn geometry(&self, scale: &ScaleMap, use_scale: bool) -> Result<Geometry> {
        if let (Some(base), false) = (&self.fixed, use_scale) {
            return Ok(Geometry {
                adjusted: self.p.depth.clone(),
                argmin: None,
                base: base.clone(),
            });
        }
        let depth = self.p.depth.as_ref().expect("depth-based problem");
        let adjusted = if use_scale {
            apply_scale_map(depth, scale)?
        } else {
            depth.clone()
        };
        let (small, argmin) = downsample_depth(&adjusted, self.cfg.init.downsample_factor)?;
        let mut base = init_gaussians(self.image_small.as_ref().unwrap(), &small, &self.cfg.init)?;
        base.scale_max = self.scale_max;
        Ok(Geometry {
            adjusted: Some(adjusted),
            argmin: Some(argmin),
            base,
        })
    }

    fn evaluate(&self, delta: &DeltaSet, scale: &ScaleMap, want_grad: bool) -> Result<Evaluation> {
        let w = &self.cfg.weights;
        let use_scale = self.cfg.optimize_scale_map;
        let geo = self.geometry(scale, use_scale)?;
        let spec = &self.cfg.activation;
        let composed = compose(&geo.base, delta, spec)?;

        let in_frame = Frame::new(&composed, &self.input_proj, viewport(&self.p.input.camera));
        let in_out = in_frame.render();
        let nv_frames: Vec<Frame> = self
            .p
            .novel
            .iter()
            .zip(&self.novel_proj)
            .map(|(v, proj)| Frame::new(&composed, proj, viewport(&v.camera)))
            .collect();
        let nv_out: Vec<_> = nv_frames.iter().map(Frame::render).collect();

        let color_views: Vec<_> = nv_out
            .iter()
            .zip(&self.p.novel)
            .zip(&self.masks)
            .map(|((o, v), m)| (&o.color, &v.target, m))
            .collect();
        let color = losses::color_loss(&in_out.color, &self.p.input.target, &color_views)?;
        let alpha_views: Vec<_> = nv_out.iter().zip(&self.masks).map(|(o, m)| (&o.alpha, m)).collect();
        let alpha = losses::alpha_loss(&in_out.alpha, &alpha_views)?;
        let mut percep = 0.0;
        let mut percep_grads = Vec::with_capacity(nv_out.len());
        for ((o, v), m) in nv_out.iter().zip(&self.p.novel).zip(&self.masks) {
            let (val, g) = losses::perceptual_loss(&o.color, &v.target, Some(m), &self.extractor as &dyn FeatureExtractor)?;
            percep += val;
            percep_grads.push(g);
        }

        let mut parts = LossParts {
            color: color.value,
            alpha: alpha.value,
            percep,
            ..LossParts::default()
        };
        let (d_delta_reg_val, d_delta_reg) = losses::delta_reg(delta, w.delta_bound);
        parts.delta = d_delta_reg_val;
        let (splat_val, splat_grads) = losses::splat_size_reg(&in_frame, w);
        parts.splat = splat_val;

        let mut depth_terms = None;
        if let (Some(adjusted), Some(gt)) = (&geo.adjusted, &self.depth_target) {
            let (dv, dg) = losses::depth_loss(&adjusted.layers[0], gt)?;
            let (tv, tg) = losses::tv_second_layer(&adjusted.layers[1], adjusted.width, adjusted.height)?;
            let floater = losses::floater_grad_reg(&geo.base, &composed, adjusted, w)?;
            let sr = losses::scale_map_regs(scale);
            parts.depth = dv;
            parts.tv = tv;
            parts.grad = floater.value;
            if use_scale {
                parts.scale = sr.scale;
                parts.grad_scale = sr.grad_scale;
            }
            depth_terms = Some((dg, tg, floater, sr));
        }
        let report = total_loss(&parts, w);
        if !want_grad {
            return Ok(Evaluation {
                report,
                composed,
                d_delta: vec![],
                d_log_scale: None,
            });
        }

        // image-space gradients
        let mut up_in = RenderGrad::zeros(in_frame.viewport());
        for (i, g) in color.input.iter().enumerate() {
            up_in.color[i] = g.map(|v| w.color * v);
            up_in.alpha[i] = w.alpha * alpha.input[i];
        }
        let mut raster = in_frame.raster_backward(&up_in);
        for (r, s) in raster.iter_mut().zip(&splat_grads) {
            r.cov += s.cov * w.splat;
        }
        let mut d_composed = in_frame.splat_backward(&raster).gaussians;
        for (k, frame) in nv_frames.iter().enumerate() {
            let mut up = RenderGrad::zeros(frame.viewport());
            for i in 0..up.color.len() {
                let (c, p) = (color.novel[k][i], percep_grads[k][i]);
                up.color[i] = std::array::from_fn(|ch| w.color * c[ch] + w.percep * p[ch]);
                up.alpha[i] = w.alpha * alpha.novel[k][i];
            }
            for (acc, g) in d_composed.iter_mut().zip(frame.backward(&up).gaussians) {
                acc.add_assign(&g);
            }
        }
        if let Some((_, _, floater, _)) = &depth_terms {
            for (g, d) in d_composed.iter_mut().zip(&floater.d_opacity) {
                g.opacity += w.grad * d;
            }
        }

        let cg = compose_backward(&geo.base, delta, spec, &d_composed)?;
        let mut d_delta = cg.d_delta;
        for (g, r) in d_delta.iter_mut().zip(&d_delta_reg) {
            g.position.x += w.delta * r.position.x;
            g.position.y += w.delta * r.position.y;
        }

        let mut d_log_scale = None;
        if use_scale {
            let (dg, tg, floater, sr) = depth_terms.as_ref().unwrap();
            let adjusted = geo.adjusted.as_ref().unwrap();
            let argmin = geo.argmin.as_ref().unwrap();
            let d_small = init_backward(&geo.base, self.s0, &cg.d_base);
            let cells = geo.base.grid_w * geo.base.grid_h;
            let n = adjusted.width * adjusted.height;
            let mut d_adj: [Vec<f64>; LAYERS] = [vec![0.0; n], vec![0.0; n]];
            for l in 0..LAYERS {
                for k in 0..cells {
                    d_adj[l][argmin[l][k]] += d_small[l * cells + k];
                }
                for i in 0..n {
                    d_adj[l][i] += w.grad * floater.d_depth[l][i];
                }
            }
            for i in 0..n {
                d_adj[0][i] += w.depth * dg[i];
                d_adj[1][i] += w.tv * tg[i];
            }
            let mut du = apply_scale_map_backward(adjusted, &d_adj);
            for i in 0..n {
                du[i] += w.scale * sr.d_scale[i] + w.grad_scale * sr.d_grad_scale[i];
            }
            d_log_scale = Some(du);
        }
        Ok(Evaluation {
            report,
            composed,
            d_delta,
            d_log_scale,
        })
    }
}

/// Runs the optimizer. The trace holds one record per step, each evaluated
/// before that step's update; the update after step `k` uses `lr_at(k + 1)`.
pub fn fit(problem: &FitProblem, cfg: &FitConfig) -> Result<FitTrace> {
    let started = Instant::now();
    let prob = Problem::new(problem, cfg)?;
    let template = match &prob.fixed {
        Some(b) => b.clone(),
        None => prob.geometry(&ScaleMap::identity(1, 1), false)?.base,
    };
    let mut delta = DeltaSet::zeros_like(&template);
    let (sw, sh) = problem.depth.as_ref().map_or((0, 0), |d| (d.width, d.height));
    let mut scale = ScaleMap::identity(sw, sh);

    let n_delta = delta.values.len() * ATTRIBUTES;
    let n_params = n_delta + if cfg.optimize_scale_map { sw * sh } else { 0 };
    let mut adam = Adam::new(n_params, cfg.adam);
    let mut params = vec![0.0; n_params];
    let mut grads = vec![0.0; n_params];

    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let eval = prob.evaluate(&delta, &scale, true)?;
        if !eval.report.total.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        for (chunk, g) in grads[..n_delta].chunks_mut(ATTRIBUTES).zip(&eval.d_delta) {
            chunk.copy_from_slice(&g.to_array());
        }
        if let Some(du) = &eval.d_log_scale {
            grads[n_delta..].copy_from_slice(du);
        }
        let lr = cfg.lr_at(step + 1);
        adam.step(&mut params, &grads, lr);
        for (v, chunk) in delta.values.iter_mut().zip(params[..n_delta].chunks(ATTRIBUTES)) {
            *v = Gaussian::from_array(chunk.try_into().unwrap());
        }
        if cfg.optimize_scale_map {
            scale.log_scale.copy_from_slice(&params[n_delta..]);
        }
        records.push(StepRecord {
            step,
            lr,
            report: eval.report,
        });
    }
    let last = prob.evaluate(&delta, &scale, false)?;
    if !last.report.total.is_finite() {
        return Err(Error::NonFiniteLoss { step: cfg.steps });
    }
    Ok(FitTrace {
        records,
        final_report: last.report,
        final_set: last.composed,
        delta,
        scale_map: scale,
        mask_sources: prob.mask_sources(),
        wall_time: started.elapsed(),
    })
}

/// Evaluates the losses of `delta` without optimizing.
pub fn evaluate_losses(problem: &FitProblem, cfg: &FitConfig, delta: &DeltaSet) -> Result<LossReport> {
    let prob = Problem::new(problem, cfg)?;
    let (sw, sh) = problem.depth.as_ref().map_or((0, 0), |d| (d.width, d.height));
    Ok(prob.evaluate(delta, &ScaleMap::identity(sw, sh), false)?.report)
}

/// Input/target swap for self-supervised fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct SsftPair {
    /// The model rendered from the pseudo camera.
    pub input: ImageRgb,
    pub input_camera: Camera,
    /// The real photograph, seen from the source camera.
    pub target: ImageRgb,
    pub target_camera: Camera,
    /// Source pixels visible from the pseudo camera.
    pub mask: FrustumMask,
}

pub fn make_ssft_pair(model: &GaussianSet, source: &Camera, pseudo: &Camera, real: &ImageRgb) -> Result<SsftPair> {
    let to_pseudo = ComposedProjection::for_views(source, pseudo)?;
    let input = render(model, &to_pseudo, viewport(pseudo)).color;
    let at_source = render(model, &ComposedProjection::for_views(source, source)?, viewport(source));
    let depth: Vec<f64> = at_source
        .inv_depth
        .data
        .iter()
        .map(|&i| if i > 0.0 { 1.0 / i } else { 0.0 })
        .collect();
    let mask = frustum_mask(source, pseudo, &depth, FRUSTUM_BOUND)?;
    Ok(SsftPair {
        input,
        input_camera: *pseudo,
        target: real.clone(),
        target_camera: *source,
        mask,
    })
}
