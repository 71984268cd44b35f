use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{GOOD_DIR, TEST_DIR, TRAIN_DIR};
use super::sample::{write_sample, MultiModalSample};
use super::synth::{generate_synthetic, AlbedoTexture, Defect, DefectKind, NoiseLevels, Surface, SyntheticSceneSpec};
use crate::error::Result;

/// Which defects the anomalous test samples carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectMix {
    /// Alternating geometry-only (dent, bump, scratch) and albedo-only stains.
    Mixed,
    /// Geometry-only defects covering at most 1% of the image.
    SmallGeometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub categories: usize,
    pub train: usize,
    pub test_good: usize,
    pub test_defect: usize,
    pub size: usize,
    pub pixel_pitch: f64,
    pub intensity_noise: f64,
    pub position_noise: f64,
    /// Points per mm².
    pub cloud_density: f64,
    pub defects: DefectMix,
    /// Albedo texture amplitude around its base value.
    pub texture_variation: f64,
    /// Fraction of albedo removed at the centre of a stain.
    pub stain_amplitude: [f64; 2],
    /// Depth of dents and height of bumps, mm.
    pub geometric_amplitude: [f64; 2],
    /// Scratch depth, mm.
    pub scratch_amplitude: [f64; 2],
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            categories: 3,
            train: 20,
            test_good: 20,
            test_defect: 20,
            size: 128,
            pixel_pitch: 0.1,
            intensity_noise: 0.01,
            position_noise: 0.002,
            cloud_density: 20.0,
            defects: DefectMix::Mixed,
            texture_variation: 0.05,
            stain_amplitude: [0.1, 0.5],
            geometric_amplitude: [0.02, 0.06],
            scratch_amplitude: [0.008, 0.02],
            seed: 0,
        }
    }
}

/// Generated samples of one category, test samples normal first.
#[derive(Debug, Clone)]
pub struct BenchmarkCategory {
    pub name: String,
    pub train: Vec<MultiModalSample>,
    pub test: Vec<MultiModalSample>,
}

const NAMES: [&str; 3] = ["plate", "wave", "dome"];

fn base_scene(cfg: &BenchmarkConfig, category: usize) -> SyntheticSceneSpec {
    let (surface, tint) = match category % 3 {
        0 => (
            Surface::Plane {
                slope_x: 0.05,
                slope_y: -0.03,
            },
            [0.85, 0.85, 0.9],
        ),
        1 => (
            Surface::Sinusoid {
                amplitude: 0.04,
                period: 3.2,
            },
            [0.9, 0.7, 0.5],
        ),
        _ => (
            Surface::SphereCap {
                radius: 2.0 * cfg.size as f64 * cfg.pixel_pitch,
            },
            [0.6, 0.85, 0.65],
        ),
    };
    SyntheticSceneSpec {
        height: cfg.size,
        width: cfg.size,
        pixel_pitch: cfg.pixel_pitch,
        surface,
        albedo: AlbedoTexture {
            variation: cfg.texture_variation,
            ..AlbedoTexture::default()
        },
        tint,
        rig: crate::geometry::LightingRig::ring(4, 30.0).expect("standard ring is valid"),
        defects: Vec::new(),
        cloud_density: cfg.cloud_density,
        noise: NoiseLevels {
            intensity: cfg.intensity_noise,
            position: cfg.position_noise,
        },
    }
}

fn range(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn random_defect(cfg: &BenchmarkConfig, index: usize, rng: &mut ChaCha8Rng) -> Defect {
    let s = cfg.size as f64;
    let kind = match cfg.defects {
        DefectMix::Mixed if index % 2 == 1 => DefectKind::ColorStain,
        _ => [DefectKind::Dent, DefectKind::Bump, DefectKind::Scratch][(index / 2) % 3],
    };
    let small = cfg.defects == DefectMix::SmallGeometric;
    let (size, width, amplitude) = match kind {
        DefectKind::Scratch => {
            let width = rng.random_range(3.0..4.0);
            let max_len = if small { 0.01 * s * s / width } else { 0.35 * s };
            (
                rng.random_range(0.6 * max_len..max_len),
                width,
                range(rng, cfg.scratch_amplitude),
            )
        }
        DefectKind::ColorStain => (
            rng.random_range(0.08 * s..0.15 * s),
            3.0,
            range(rng, cfg.stain_amplitude),
        ),
        _ => {
            let max_d = if small {
                (0.04 / std::f64::consts::PI).sqrt() * s
            } else {
                0.15 * s
            };
            (
                rng.random_range(0.6 * max_d..max_d),
                3.0,
                range(rng, cfg.geometric_amplitude),
            )
        }
    };
    let angle_deg = rng.random_range(0.0..180.0);
    let probe = Defect {
        kind,
        center: [0.0, 0.0],
        size,
        amplitude,
        angle_deg,
        width,
    };
    let reach = match kind {
        DefectKind::Scratch => 0.5 * size + width,
        _ => 0.5 * size,
    } + 2.0;
    let center = [rng.random_range(reach..s - reach), rng.random_range(reach..s - reach)];
    Defect { center, ..probe }
}

/// The synthetic benchmark, generated in memory. Each sample's seed and
/// defect parameters come from one seeded stream per category, so results
/// do not depend on the thread count.
pub fn generate_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkCategory>> {
    (0..cfg.categories)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64 + 1);
            let base = base_scene(cfg, c);
            let mut specs = Vec::new();
            for _ in 0..cfg.train + cfg.test_good {
                specs.push((base.clone(), rng.random::<u64>()));
            }
            for i in 0..cfg.test_defect {
                let mut spec = base.clone();
                spec.defects.push(random_defect(cfg, i, &mut rng));
                specs.push((spec, rng.random::<u64>()));
            }
            let mut samples = specs
                .par_iter()
                .enumerate()
                .map(|(i, (spec, seed))| {
                    let mut s = generate_synthetic(spec, *seed)?.sample;
                    s.id = format!("{i:03}");
                    Ok(s)
                })
                .collect::<Result<Vec<_>>>()?;
            let test = samples.split_off(cfg.train);
            Ok(BenchmarkCategory {
                name: if c < NAMES.len() {
                    NAMES[c].to_string()
                } else {
                    format!("category{c}")
                },
                train: samples,
                test,
            })
        })
        .collect()
}

/// Writes the benchmark as a dataset tree under `root`.
pub fn write_benchmark(root: &Path, categories: &[BenchmarkCategory]) -> Result<()> {
    for cat in categories {
        let dir = root.join(&cat.name);
        cat.train
            .par_iter()
            .try_for_each(|s| write_sample(&dir.join(TRAIN_DIR).join(GOOD_DIR).join(&s.id), s))?;
        cat.test.par_iter().try_for_each(|s| {
            let kind = s.defect_kind.as_deref().unwrap_or(GOOD_DIR);
            write_sample(&dir.join(TEST_DIR).join(kind).join(&s.id), s)
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample::Label;

    fn tiny() -> BenchmarkConfig {
        BenchmarkConfig {
            categories: 2,
            train: 3,
            test_good: 2,
            test_defect: 4,
            size: 64,
            ..Default::default()
        }
    }

    #[test]
    fn counts_and_labels() {
        let cats = generate_benchmark(&tiny()).unwrap();
        assert_eq!(cats.len(), 2);
        for c in &cats {
            assert_eq!(c.train.len(), 3);
            assert_eq!(c.test.len(), 6);
            assert!(c.train.iter().all(|s| s.label == Label::Normal));
            let kinds: Vec<_> = c.test[2..].iter().map(|s| s.defect_kind.clone().unwrap()).collect();
            assert_eq!(kinds, ["dent", "color-stain", "bump", "color-stain"]);
        }
    }

    #[test]
    fn small_defects_stay_under_one_percent() {
        let cfg = BenchmarkConfig {
            defects: DefectMix::SmallGeometric,
            test_defect: 9,
            ..tiny()
        };
        for c in generate_benchmark(&cfg).unwrap() {
            for s in c.test.iter().filter(|s| s.label == Label::Anomalous) {
                let m = s.mask.as_ref().unwrap();
                assert!(m.area_fraction() <= 0.0105, "{}", m.area_fraction());
                assert_ne!(s.defect_kind.as_deref(), Some("color-stain"));
            }
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let a = generate_benchmark(&tiny()).unwrap();
        let b = generate_benchmark(&tiny()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (s, t) in x.test.iter().zip(&y.test) {
                assert_eq!(s.rgb, t.rgb);
                assert_eq!(s.cloud, t.cloud);
            }
        }
    }
}
