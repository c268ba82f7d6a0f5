//! Shared scene builders for the benchmarks.

use layersplat::synthetic::TwoPlanes;
use layersplat::{compose, ActivationSpec, Camera, DeltaSet, FitProblem, GaussianSet, InitConfig};
use nalgebra::Vector3;

/// The two-plane scene at `size`² with novel views 10 cm either side.
pub fn desk_problem(size: usize) -> FitProblem {
    let scene = TwoPlanes::new(size).expect("valid size");
    let novel = [-0.1, 0.1]
        .iter()
        .map(|&x| scene.view(&scene.camera_at(Vector3::new(x, 0.0, 0.0))))
        .collect();
    FitProblem::new(scene.image.clone(), scene.depth.clone(), scene.source, novel)
}

/// Composed initial Gaussians of the two-plane scene (`size²/2` of them),
/// and a camera 10 cm to the right of the source.
pub fn desk_scene(size: usize) -> (GaussianSet, Camera, Camera) {
    let scene = TwoPlanes::new(size).expect("valid size");
    let cfg = InitConfig::default();
    let (image, depth) =
        layersplat::initializer::downsample(&scene.image, &scene.depth, cfg.downsample_factor).expect("divisible");
    let base = layersplat::init_gaussians(&image, &depth, &cfg).expect("positive depth");
    let set = compose(&base, &DeltaSet::zeros_like(&base), &ActivationSpec::default()).expect("in domain");
    let target = scene.camera_at(Vector3::new(0.1, 0.0, 0.0));
    (set, scene.source, target)
}
