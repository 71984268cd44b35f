use d3fuse::features::{handcrafted_features, idw_weights, Modality};
use d3fuse::geometry::{
    angle_between, fps_downsample, integrate_normals_to_depth, render_lambertian, solve_photometric_stereo, LightStack,
    LightingRig, NormalMap, PointCloud,
};
use d3fuse::pipeline::with_threads;
use d3fuse::Raster;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Normals within `max_tilt` of the zenith, albedo in `(0.2, 1)`.
fn scene(w: usize, h: usize, max_tilt: f64, seed: u64) -> NormalMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = w * h;
    let normals = (0..n)
        .map(|_| {
            let cos_t: f64 = rng.random_range(max_tilt.cos()..1.0);
            let sin_t = (1.0 - cos_t * cos_t).sqrt();
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            [sin_t * phi.cos(), sin_t * phi.sin(), cos_t]
        })
        .collect();
    let albedo = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    NormalMap::new(w, h, normals, albedo, vec![true; n]).unwrap()
}

fn rig_strategy() -> impl Strategy<Value = LightingRig> {
    (3usize..=6, 25.0f64..50.0).prop_map(|(k, tilt)| LightingRig::ring(k, tilt).unwrap())
}

fn rotate(r: &Rotation3<f64>, v: [f64; 3]) -> [f64; 3] {
    let o = r * Vector3::from(v);
    [o.x, o.y, o.z]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn photometric_round_trip(rig in rig_strategy(), seed in any::<u64>()) {
        // 30° cap keeps every light above the horizon for rigs tilted ≤ 50°
        let truth = scene(9, 7, 30f64.to_radians(), seed);
        let got = solve_photometric_stereo(&render_lambertian(&truth, &rig), 0.0).unwrap();
        for (a, b) in got.normals().iter().zip(truth.normals()) {
            prop_assert!(angle_between(*a, *b) < 1e-6);
        }
    }

    #[test]
    fn intensity_scaling_scales_albedo_only(rig in rig_strategy(), seed in any::<u64>(), c in 0.1f64..10.0) {
        let truth = scene(6, 5, 30f64.to_radians(), seed);
        let stack = render_lambertian(&truth, &rig);
        let scaled: Vec<Raster> = stack
            .images()
            .iter()
            .map(|img| Raster::from_vec(img.width(), img.height(), 1, img.data().iter().map(|v| v * c).collect()).unwrap())
            .collect();
        let base = solve_photometric_stereo(&stack, 0.0).unwrap();
        let got = solve_photometric_stereo(&LightStack::new(scaled, rig).unwrap(), 0.0).unwrap();
        for i in 0..base.normals().len() {
            prop_assert!(angle_between(got.normals()[i], base.normals()[i]) <= 1e-12);
            prop_assert!((got.albedo()[i] - c * base.albedo()[i]).abs() <= 1e-9 * c);
        }
    }

    #[test]
    fn common_rotation_keeps_albedo(seed in any::<u64>(), axis in (-1.0f64..1.0, -1.0f64..1.0, 0.2f64..1.0), angle in -0.6f64..0.6) {
        let rig = LightingRig::ring(4, 35.0).unwrap();
        let truth = scene(6, 6, 30f64.to_radians(), seed);
        let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(axis.0, axis.1, axis.2)), angle);
        let rig_r = LightingRig::new(rig.directions().iter().map(|d| rotate(&r, [d.x, d.y, d.z])).collect()).unwrap();
        let normals_r: Vec<[f64; 3]> = truth.normals().iter().map(|n| rotate(&r, *n)).collect();
        let truth_r = NormalMap::new(6, 6, normals_r, truth.albedo().to_vec(), vec![true; 36]).unwrap();
        let a = solve_photometric_stereo(&render_lambertian(&truth, &rig), 0.0).unwrap();
        let b = solve_photometric_stereo(&render_lambertian(&truth_r, &rig_r), 0.0).unwrap();
        for (x, y) in a.albedo().iter().zip(b.albedo()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn fps_is_deterministic(seed in any::<u64>(), n in 1usize..200, factor in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let cloud = PointCloud::new(pts).unwrap();
        let a = fps_downsample(&cloud, factor, seed).unwrap();
        let b = fps_downsample(&cloud, factor, seed).unwrap();
        prop_assert_eq!(a.len(), n.div_ceil(factor));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn integrated_depth_has_zero_mean(seed in any::<u64>(), w in 2usize..20, h in 2usize..20) {
        let depth = integrate_normals_to_depth(&scene(w, h, 60f64.to_radians(), seed)).unwrap();
        let mean = depth.data().iter().sum::<f64>() / depth.data().len() as f64;
        prop_assert!(mean.abs() <= 1e-9);
    }

    #[test]
    fn idw_weights_sum_to_one(d in prop::collection::vec(prop_oneof![Just(0.0), 1e-3f64..4.0], 1..4)) {
        let w = idw_weights(&d);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn handcrafted_descriptors_ignore_thread_count(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Raster::from_fn(48, 40, 3, |_, _, _| rng.random());
        let one = with_threads(1, || Ok(handcrafted_features(&img, 8, Modality::Rgb))).unwrap();
        let four = with_threads(4, || Ok(handcrafted_features(&img, 8, Modality::Rgb))).unwrap();
        prop_assert_eq!(one.data(), four.data());
        let global = handcrafted_features(&img, 8, Modality::Rgb);
        prop_assert_eq!(one.data(), global.data());
    }
}
