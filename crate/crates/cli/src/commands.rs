use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use layersplat::depth::{frustum_mask, second_layer_heuristic, FRUSTUM_BOUND};
use layersplat::fit::MaskSource;
use layersplat::initializer::downsample;
use layersplat::io::{self, read_camera, read_depth, read_rgb, Manifest, SplatFile, ViewEntry};
use layersplat::metrics::{psnr_masked, shift_sensitivity, ssim_masked};
use layersplat::{
    init_gaussians, psnr, render as render_set, ssim, Camera, ComposedProjection, Error, Extrinsics, FitConfig,
    FitProblem, FitView, GaussianSet, InitConfig, Intrinsics, LayeredDepthMap, LossWeights, Viewport,
};
use serde_json::json;

use crate::{EvalArgs, ExportArgs, FitArgs, InitArgs, RenderArgs};

pub const DEFAULT_DILATION: usize = 4;

/// 2 for unreadable or malformed inputs and bad options, 1 for numerical
/// failures.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(err) if err.is_io() || matches!(err, Error::InvalidConfig(_)) => 2,
        Some(_) => 1,
        None => 2,
    }
}

fn default_camera(width: usize, height: usize) -> Camera {
    let f = width.max(height) as f64;
    Camera::new(
        Intrinsics::new(f, f, width as f64 / 2.0, height as f64 / 2.0),
        Extrinsics::identity(),
        width,
        height,
    )
}

/// Reads a camera for an image of the given size; a file that states a
/// different size is rejected.
fn camera_for(path: &Path, width: usize, height: usize) -> Result<Camera> {
    let camera = read_camera(path, Some((width, height)))?;
    if (camera.width, camera.height) != (width, height) {
        return Err(Error::Format {
            path: path.into(),
            message: format!(
                "camera is {}x{} but its image is {width}x{height}",
                camera.width, camera.height
            ),
        }
        .into());
    }
    Ok(camera)
}

fn read_depth_sized(path: &Path, width: usize, height: usize) -> Result<Vec<f64>> {
    let (values, w, h) = read_depth(path)?;
    if (w, h) != (width, height) {
        return Err(Error::Format {
            path: path.into(),
            message: format!("depth is {w}x{h} but its image is {width}x{height}"),
        }
        .into());
    }
    Ok(values)
}

fn layered_depth(first: &Path, second: Option<&Path>, width: usize, height: usize, dilation: usize) -> Result<LayeredDepthMap> {
    let d1 = read_depth_sized(first, width, height)?;
    Ok(match second {
        Some(p) => LayeredDepthMap::new(width, height, d1, read_depth_sized(p, width, height)?)?,
        None => second_layer_heuristic(&d1, width, height, dilation)?,
    })
}

fn bounds(set: &GaussianSet) -> [[f64; 2]; 3] {
    let mut b = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
    for g in &set.gaussians {
        for (axis, range) in b.iter_mut().enumerate() {
            range[0] = range[0].min(g.position[axis]);
            range[1] = range[1].max(g.position[axis]);
        }
    }
    b
}

fn describe(set: &GaussianSet) -> String {
    if set.gaussians.is_empty() {
        return "0 gaussians".into();
    }
    let [x, y, z] = bounds(set);
    format!(
        "{} gaussians ({}x{} grid, 2 layers), x [{:.4}, {:.4}], y [{:.4}, {:.4}], z [{:.4}, {:.4}]",
        set.gaussians.len(),
        set.grid_w,
        set.grid_h,
        x[0],
        x[1],
        y[0],
        y[1],
        z[0],
        z[1]
    )
}

pub fn init(a: &InitArgs) -> Result<()> {
    let image = read_rgb(&a.image)?;
    let (w, h) = (image.width, image.height);
    let camera = match &a.camera {
        Some(p) => camera_for(p, w, h)?,
        None => default_camera(w, h),
    };
    let depth = layered_depth(&a.depth, a.depth2.as_deref(), w, h, a.dilation)?;
    let cfg = InitConfig {
        s0: a.s0,
        downsample_factor: a.downsample,
    };
    cfg.check()?;
    let (small_image, small_depth) = downsample(&image, &depth, a.downsample)?;
    let set = init_gaussians(&small_image, &small_depth, &cfg)?;
    SplatFile { set, camera }.write(&a.out)?;
    let set = &SplatFile::read(&a.out)?.set;
    println!("{}", describe(set));
    println!("wrote {}", a.out.display());
    Ok(())
}

fn parse_weight(weights: &mut LossWeights, spec: &str) -> Result<()> {
    let (name, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("--weight expects NAME=VALUE, got `{spec}`")))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("--weight {name}: `{value}` is not a number")))?;
    weights.set(name.trim(), value)?;
    Ok(())
}

fn novel_view(entry: &ViewEntry) -> Result<FitView> {
    let target = read_rgb(&entry.image)?;
    let (w, h) = (target.width, target.height);
    let camera = camera_for(&entry.camera, w, h)?;
    let depth = entry.depth.as_deref().map(|p| read_depth_sized(p, w, h)).transpose()?;
    Ok(FitView { camera, target, depth })
}

fn mask_source_name(m: &MaskSource) -> &'static str {
    match m {
        MaskSource::TargetDepth => "target_depth",
        MaskSource::RenderedInitial => "rendered_initial",
    }
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let input = &manifest.input;
    let image = read_rgb(&input.image)?;
    let (w, h) = (image.width, image.height);
    let camera = camera_for(&input.camera, w, h)?;
    let novel = manifest.novel.iter().map(novel_view).collect::<Result<Vec<_>>>()?;

    let problem = match &a.from {
        Some(path) => {
            if a.optimize_scale_map {
                return Err(Error::InvalidConfig(
                    "--optimize-scale-map needs depth; it cannot be combined with --from".into(),
                )
                .into());
            }
            let splat = SplatFile::read(path)?;
            let mut p = FitProblem::from_base(splat.set, splat.camera, image, novel);
            p.input.camera = camera;
            p
        }
        None => {
            let first = input.depth.as_deref().ok_or_else(|| Error::Schema {
                path: a.manifest.clone(),
                issues: vec![layersplat::error::LineIssue {
                    line: input.line,
                    message: "the input view needs a depth path unless --from is given".into(),
                }],
            })?;
            let depth = layered_depth(first, input.depth2.as_deref(), w, h, a.dilation)?;
            FitProblem::new(image, depth, camera, novel)
        }
    };

    let defaults = FitConfig::default();
    let steps = a.steps.unwrap_or(defaults.steps);
    let mut weights = match &a.weights_file {
        Some(p) => io::read_weights(p)?,
        None => LossWeights::default(),
    };
    for spec in &a.weights {
        parse_weight(&mut weights, spec)?;
    }
    let cfg = FitConfig {
        steps,
        lr_peak: a.lr_peak.unwrap_or(defaults.lr_peak),
        lr_final: a.lr_final.unwrap_or(defaults.lr_final),
        warmup_steps: a.warmup.unwrap_or(steps / 20),
        weights,
        optimize_scale_map: a.optimize_scale_map,
        init: InitConfig {
            s0: a.s0,
            downsample_factor: a.downsample,
        },
        ..defaults
    };

    let trace = layersplat::fit(&problem, &cfg)?;
    let splat = SplatFile {
        set: trace.final_set.clone(),
        camera: problem.frame,
    };
    splat.write(&a.out)?;

    let trace_path = a.trace.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    let mut csv = Vec::new();
    trace
        .write_csv(&mut csv)
        .with_context(|| format!("formatting {}", trace_path.display()))?;
    io::write_atomic(&trace_path, &csv)?;

    let initial = trace.records.first().map(|r| &r.report);
    if let Some(path) = &a.report {
        let report = json!({
            "steps": steps,
            "gaussians": trace.final_set.gaussians.len(),
            "wall_time_s": trace.wall_time.as_secs_f64(),
            "mask_sources": trace.mask_sources.iter().map(mask_source_name).collect::<Vec<_>>(),
            "initial": initial,
            "final": trace.final_report,
        });
        write_json(path, &report)?;
    }
    match initial {
        Some(r0) => println!(
            "{steps} steps in {:.1}s: data {:.6} -> {:.6}, total {:.6} -> {:.6}",
            trace.wall_time.as_secs_f64(),
            r0.data,
            trace.final_report.data,
            r0.total,
            trace.final_report.total
        ),
        None => println!(
            "0 steps: data {:.6}, total {:.6}",
            trace.final_report.data, trace.final_report.total
        ),
    }
    println!("wrote {} and {}", a.out.display(), trace_path.display());
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn render(a: &RenderArgs) -> Result<()> {
    let splat = SplatFile::read(&a.splat)?;
    let fallback = (splat.camera.width, splat.camera.height);
    let mut camera = read_camera(&a.camera, Some(fallback))?;
    if let (Some(w), Some(h)) = (a.width, a.height) {
        if w == 0 || h == 0 {
            return Err(Error::InvalidConfig(format!("render size must be positive, got {w}x{h}")).into());
        }
        camera = camera.resized(w, h);
    }
    let proj = ComposedProjection::for_views(&splat.camera, &camera)?;
    let out = render_set(&splat.set, &proj, Viewport::new(camera.width, camera.height));
    io::write_rgb_png(&a.out_color, &out.color.clamped())?;
    let mut written: Vec<&PathBuf> = vec![&a.out_color];
    if let Some(p) = &a.out_alpha {
        io::write_gray_png(p, &out.alpha)?;
        written.push(p);
    }
    if let Some(p) = &a.out_invdepth {
        let enc = io::write_inv_depth_png(p, &out.inv_depth)?;
        println!("inverse depth max {:e} 1/m", enc.max);
        written.push(p);
    }
    let names: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
    println!("{}x{}: wrote {}", camera.width, camera.height, names.join(", "));
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let rendered = read_rgb(&a.rendered)?;
    let truth = read_rgb(&a.truth)?;
    let mut report = json!({
        "psnr": psnr(&rendered, &truth)?,
        "ssim": ssim(&rendered, &truth)?,
    });
    if let (Some(src), Some(tgt), Some(depth)) = (&a.source_camera, &a.target_camera, &a.target_depth) {
        let (w, h) = (truth.width, truth.height);
        let source = read_camera(src, None)?;
        let target = camera_for(tgt, w, h)?;
        let depth = read_depth_sized(depth, w, h)?;
        let mask = frustum_mask(&target, &source, &depth, FRUSTUM_BOUND)?;
        report["masked"] = json!({
            "applicable": mask.count() > 0,
            "coverage": mask.count() as f64 / (w * h) as f64,
            "psnr": psnr_masked(&rendered, &truth, &mask)?,
            "ssim": ssim_masked(&rendered, &truth, &mask)?,
        });
    }
    if !a.shifts.is_empty() {
        report["shift_sensitivity"] = json!(shift_sensitivity(&truth, &a.shifts)?
            .into_iter()
            .map(|r| json!({
                "fraction": r.fraction,
                "pixels": r.pixels,
                "psnr": r.psnr,
                "ssim": r.ssim,
            }))
            .collect::<Vec<_>>());
    }
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn export_viewer(a: &ExportArgs) -> Result<()> {
    let splat = SplatFile::read(&a.splat)?;
    let manifest = io::export_viewer(&splat, &a.out)?;
    println!(
        "{} gaussians, headbox radius {} m: wrote {}",
        manifest.count,
        manifest.headbox_radius_m,
        a.out.join(io::MANIFEST_NAME).display()
    );
    Ok(())
}
