use std::path::Path;

use layersplat::depth::{median_scale_align, second_layer_heuristic};
use layersplat::io::{decode_pfm, encode_pfm, Manifest, SplatFile};
use layersplat::{
    compose, init_gaussians, render, ActivationSpec, Camera, ComposedProjection, DeltaSet, Extrinsics, Gaussian,
    ImageRgb, InitConfig, Intrinsics, LayeredDepthMap, Viewport,
};
use proptest::prelude::*;

fn depth_grid(w: usize, h: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.5f64..20.0, w * h)
}

/// A `w`x`h` grid image and two ordered depth layers.
fn scene_inputs() -> impl Strategy<Value = (ImageRgb, LayeredDepthMap)> {
    (2usize..7, 2usize..7).prop_flat_map(|(w, h)| {
        (
            prop::collection::vec(prop::array::uniform3(0.0f64..=1.0), w * h),
            depth_grid(w, h),
            prop::collection::vec(0.0f64..5.0, w * h),
        )
            .prop_map(move |(rgb, first, gap)| {
                let mut image = ImageRgb::new(w, h);
                image.data = rgb;
                let second = first.iter().zip(&gap).map(|(d, g)| d + g).collect();
                (image, LayeredDepthMap::new(w, h, first, second).unwrap())
            })
    })
}

fn raw_delta() -> impl Strategy<Value = [f64; 14]> {
    prop::array::uniform14(-3.0f64..3.0)
}

fn camera(w: usize, h: usize) -> Camera {
    let f = w.max(h) as f64;
    Camera::new(Intrinsics::new(f, f, w as f64 / 2.0, h as f64 / 2.0), Extrinsics::identity(), w, h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dilated_second_layer_is_behind_the_first(w in 1usize..12, h in 1usize..12, r in 0usize..4, seed in depth_grid(12, 12)) {
        let first = seed[..w * h].to_vec();
        let d = second_layer_heuristic(&first, w, h, r).unwrap();
        prop_assert_eq!(&d.layers[0], &first);
        for (a, b) in d.layers[0].iter().zip(&d.layers[1]) {
            prop_assert!(b >= a);
        }
        if r == 0 {
            prop_assert_eq!(&d.layers[1], &first);
        }
    }

    #[test]
    fn composed_sets_satisfy_attribute_ranges((image, depth) in scene_inputs(), deltas in prop::collection::vec(raw_delta(), 72)) {
        let cfg = InitConfig { s0: None, downsample_factor: 1 };
        let base = init_gaussians(&image, &depth, &cfg).unwrap();
        let mut delta = DeltaSet::zeros_like(&base);
        for (v, d) in delta.values.iter_mut().zip(&deltas) {
            *v = Gaussian::from_array(d);
        }
        let out = compose(&base, &delta, &ActivationSpec::default()).unwrap();
        prop_assert!(out.validate().is_empty(), "{:?}", out.validate());
        for g in &out.gaussians {
            prop_assert!(g.position.z > 0.0);
            prop_assert!(g.scale.iter().all(|s| *s > 0.0 && *s <= out.scale_max * (1.0 + 1e-12)));
            let n: f64 = g.rotation.iter().map(|q| q * q).sum();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn renders_stay_within_alpha_and_color_bounds((image, depth) in scene_inputs(), deltas in prop::collection::vec(raw_delta(), 72)) {
        let cfg = InitConfig { s0: None, downsample_factor: 1 };
        let base = init_gaussians(&image, &depth, &cfg).unwrap();
        let mut delta = DeltaSet::zeros_like(&base);
        for (v, d) in delta.values.iter_mut().zip(&deltas) {
            *v = Gaussian::from_array(d);
        }
        let set = compose(&base, &delta, &ActivationSpec::default()).unwrap();
        let cam = camera(image.width * 3, image.height * 3);
        let proj = ComposedProjection::for_views(&cam, &cam).unwrap();
        let out = render(&set, &proj, Viewport::new(cam.width, cam.height));
        let max_c: f64 = set.gaussians.iter().flat_map(|g| g.color).fold(0.0, f64::max);
        let max_inv = set.gaussians.iter().map(|g| 1.0 / g.position.z).fold(0.0, f64::max);
        for i in 0..out.alpha.data.len() {
            let a = out.alpha.data[i];
            prop_assert!((0.0..1.0).contains(&a));
            for c in out.color.data[i] {
                prop_assert!(c >= 0.0 && c <= a * max_c + 1e-12);
            }
            prop_assert!(out.inv_depth.data[i] >= 0.0 && out.inv_depth.data[i] <= max_inv * (1.0 + 1e-9));
        }
    }

    #[test]
    fn splat_files_round_trip((image, depth) in scene_inputs()) {
        let cfg = InitConfig { s0: None, downsample_factor: 1 };
        let set = init_gaussians(&image, &depth, &cfg).unwrap();
        let f = SplatFile { set, camera: camera(image.width, image.height) };
        let bytes = f.to_bytes().unwrap();
        let back = SplatFile::from_bytes(&bytes, Path::new("p")).unwrap();
        prop_assert_eq!(&back.set, &f.set.quantized_f32());
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn pfm_round_trips_f32_values(w in 1usize..9, h in 1usize..9, v in prop::collection::vec(-1e6f32..1e6, 64)) {
        let values: Vec<f64> = v[..w * h].iter().map(|x| *x as f64).collect();
        let (back, bw, bh) = decode_pfm(&encode_pfm(&values, w, h)).unwrap();
        prop_assert_eq!((bw, bh), (w, h));
        prop_assert_eq!(back, values);
    }

    #[test]
    fn median_alignment_recovers_global_scale(pred in depth_grid(5, 4), s in 0.1f64..10.0) {
        let d = LayeredDepthMap::duplicated(5, 4, pred.clone()).unwrap();
        let gt: Vec<f64> = pred.iter().map(|p| p * s).collect();
        let (found, aligned) = median_scale_align(&d, &gt).unwrap();
        prop_assert!((found - s).abs() <= 1e-12 * s);
        for (a, g) in aligned.layers[0].iter().zip(&gt) {
            prop_assert!((a - g).abs() <= 1e-12 * g);
        }
    }

    #[test]
    fn manifest_parser_never_panics(text in "[a-z0-9 ./#\n]{0,200}") {
        let _ = Manifest::parse(&text, Path::new("dir/views.txt"));
    }
}
