//! Shared fixtures for the criterion benchmarks.

use d3fuse::features::{FeatureMap, Modality};
use d3fuse::geometry::{render_lambertian, LightStack, LightingRig, NormalMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A `size`×`size` stack lit by a four-light ring, with random upper-hemisphere
/// normals and albedo in `(0.2, 1)`.
pub fn random_light_stack(size: usize, seed: u64) -> LightStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size * size;
    let mut normals = Vec::with_capacity(n);
    let mut albedo = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y): (f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let z = (1.0 - x * x - y * y).sqrt();
        normals.push([x, y, z]);
        albedo.push(rng.random_range(0.2..1.0));
    }
    let nmap = NormalMap::new(size, size, normals, albedo, vec![true; n]).expect("unit normals");
    render_lambertian(&nmap, &LightingRig::ring(4, 35.0).expect("valid ring"))
}

/// Uniform features in `[0, 1)`, enough to exercise distance computations.
pub fn random_feature_map(channels: usize, side: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..channels * side * side).map(|_| rng.random::<f64>()).collect();
    FeatureMap::new(channels, side, side, 8, Modality::Rgb, data).expect("finite values")
}
