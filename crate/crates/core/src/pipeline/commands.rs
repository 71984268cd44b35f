use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{
    generate_benchmark, generate_synthetic, is_image, read_gray, read_manifest, sample_seed, write_benchmark,
    write_normal_map, write_png16, write_sample, BenchmarkCategory, BenchmarkConfig, Label, SyntheticSceneSpec,
    GOOD_DIR, TEST_DIR, TRAIN_DIR,
};
use crate::error::{Error, Result};
use crate::geometry::{solve_photometric_stereo, LightStack, LightingRig, NormalMap};
use crate::raster::Raster;

use super::config::{ModalitySet, RunConfig};
use super::extract::{extract_sample, ExtractOptions, SampleFeatures, SampleInput};
use super::model::{evaluate_category, CategoryEval, CategoryModel, ModelBundle};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const HEATMAPS_DIR: &str = "heatmaps";
pub const ABLATION_FILE: &str = "ablation.csv";

/// The samples of one category, in dataset order.
#[derive(Debug, Clone)]
pub struct CategoryData {
    pub name: String,
    pub train: Vec<SampleInput>,
    pub test: Vec<SampleInput>,
}

impl From<BenchmarkCategory> for CategoryData {
    fn from(c: BenchmarkCategory) -> Self {
        CategoryData {
            name: c.name,
            train: c.train.into_iter().map(Into::into).collect(),
            test: c.test.into_iter().map(Into::into).collect(),
        }
    }
}

/// Runs `f` on a pool of `threads` workers (0 means one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(f)
}

/// Reads and loads every sample of a dataset tree.
pub fn load_dataset(root: &Path) -> Result<Vec<CategoryData>> {
    let manifest = read_manifest(root)?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    manifest
        .categories
        .iter()
        .map(|c| {
            let load = |entries: &[crate::data::SampleEntry]| {
                entries
                    .par_iter()
                    .map(|e| {
                        Ok(SampleInput {
                            sample: e.load()?,
                            dir: Some(e.dir.clone()),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            };
            Ok(CategoryData {
                name: c.name.clone(),
                train: load(&c.train)?,
                test: load(&c.test)?,
            })
        })
        .collect()
}

/// Features of `inputs`, whose first element sits at position `offset` of the
/// category (train first, then test) for downsampling seeds.
pub fn extract_all(inputs: &[SampleInput], opts: &ExtractOptions, offset: usize) -> Result<Vec<SampleFeatures>> {
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, s)| extract_sample(s, opts, sample_seed(opts.seed, offset + i)))
        .collect()
}

/// Fits every category in memory.
pub fn fit_categories(categories: &[CategoryData], cfg: &RunConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    if categories.is_empty() {
        return Err(Error::EmptyInput("no categories to fit".into()));
    }
    let opts = ExtractOptions::from_config(cfg);
    let mut models = Vec::new();
    for cat in categories {
        let train = extract_all(&cat.train, &opts, 0)?;
        let model = CategoryModel::fit(&cat.name, &train, cfg)?;
        log::info!("{}: fitted on {} samples", cat.name, train.len());
        models.push(model);
    }
    Ok(ModelBundle::new(cfg, models))
}

/// Scores the test split of every category with its fitted model.
pub fn evaluate_categories(bundle: &ModelBundle, categories: &[CategoryData]) -> Result<Vec<CategoryEval>> {
    let opts = ExtractOptions::from_config(&bundle.config);
    categories
        .iter()
        .map(|cat| {
            let model = bundle
                .category(&cat.name)
                .ok_or_else(|| Error::Validation(format!("the model has no category '{}'", cat.name)))?;
            let test = extract_all(&cat.test, &opts, cat.train.len())?;
            let eval = evaluate_category(model, &test)?;
            log::info!("{}: I-AUROC {:.4}, P-AUROC {:.4}", cat.name, eval.i_auroc, eval.p_auroc);
            Ok(eval)
        })
        .collect()
}

/// Fits on `root` and writes the model bundle to `cfg.out`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    let root = cfg.require_root()?.to_path_buf();
    with_threads(cfg.threads, || {
        let data = load_dataset(&root)?;
        let bundle = fit_categories(&data, cfg)?;
        bundle.save(&cfg.out)?;
        Ok(bundle)
    })
}

/// Evaluates the bundle in `model_dir` on `root`, writing metrics, per-sample
/// scores and heatmaps to `cfg.out`.
pub fn cmd_eval(cfg: &RunConfig, model_dir: &Path) -> Result<Vec<CategoryEval>> {
    let root = cfg.require_root()?.to_path_buf();
    with_threads(cfg.threads, || {
        let bundle = ModelBundle::load(model_dir)?;
        let data = load_dataset(&root)?;
        let evals = evaluate_categories(&bundle, &data)?;
        write_eval(&cfg.out, &evals)?;
        Ok(evals)
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

#[derive(Serialize)]
struct HeatmapSidecar<'a> {
    sample: &'a str,
    label: Label,
    #[serde(skip_serializing_if = "Option::is_none")]
    defect_kind: Option<&'a str>,
    score: f64,
    stream_scores: &'a [f64],
    /// Stored value = (raw - min) / (max - min), or 0 when max == min.
    min: f64,
    max: f64,
}

/// Min-max normalization of a one-channel map, returning the bounds used.
pub fn normalize_heatmap(map: &Raster) -> (Raster, f64, f64) {
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = map.clone();
    for v in out.data_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    (out, lo, hi)
}

/// Writes `metrics.csv`, `scores.csv` and one 16-bit heatmap with a JSON
/// sidecar per test sample.
pub fn write_eval(out: &Path, evals: &[CategoryEval]) -> Result<()> {
    let path = out.join(METRICS_FILE);
    let mut w = csv_writer(&path)?;
    w.write_record(["category", "i_auroc", "p_auroc"])
        .map_err(|e| csv_error(&path, e))?;
    for e in evals {
        w.write_record([e.name.clone(), e.i_auroc.to_string(), e.p_auroc.to_string()])
            .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join(SCORES_FILE);
    let mut w = csv_writer(&path)?;
    w.write_record(["category", "sample", "kind", "label", "score"])
        .map_err(|e| csv_error(&path, e))?;
    for e in evals {
        for s in &e.samples {
            let label = match s.label {
                Label::Normal => "normal",
                Label::Anomalous => "anomalous",
            };
            let kind = s.defect_kind.as_deref().unwrap_or(GOOD_DIR);
            w.write_record([e.name.as_str(), &s.id, kind, label, &s.scored.score.to_string()])
                .map_err(|e| csv_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    for e in evals {
        e.samples.par_iter().try_for_each(|s| {
            let kind = s.defect_kind.as_deref().unwrap_or(GOOD_DIR);
            let dir = out.join(HEATMAPS_DIR).join(&e.name).join(kind);
            fs::create_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
            let (img, min, max) = normalize_heatmap(&s.scored.map);
            write_png16(&dir.join(format!("{}.png", s.id)), &img)?;
            let sidecar = HeatmapSidecar {
                sample: &s.id,
                label: s.label,
                defect_kind: s.defect_kind.as_deref(),
                score: s.scored.score,
                stream_scores: &s.scored.stream_scores,
                min,
                max,
            };
            let path = dir.join(format!("{}.json", s.id));
            let mut text = serde_json::to_string_pretty(&sidecar)?;
            text.push('\n');
            fs::write(&path, text).map_err(|err| Error::io(&path, err))
        })?;
    }
    Ok(())
}

/// One configuration compared by the ablation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationArm {
    pub name: String,
    pub modalities: ModalitySet,
    pub downsample: usize,
    pub interpolate: bool,
}

pub const DOWNSAMPLE_FACTORS: [usize; 3] = [1, 4, 40];

/// Modality combinations, then point-cloud downsampling with 3D alone, then
/// feature interpolation on and off with RGB + 3D.
pub fn ablation_arms(cfg: &RunConfig) -> Vec<AblationArm> {
    let set = |s: &str| s.parse::<ModalitySet>().expect("valid modality literal");
    let mut arms: Vec<AblationArm> = ["rgb", "ps", "3d", "rgb+ps", "rgb+3d", "rgb+ps+3d"]
        .iter()
        .map(|s| AblationArm {
            name: s.to_string(),
            modalities: set(s),
            downsample: cfg.downsample,
            interpolate: cfg.interpolate,
        })
        .collect();
    for f in DOWNSAMPLE_FACTORS {
        arms.push(AblationArm {
            name: format!("3d-downsample-{f}"),
            modalities: set("3d"),
            downsample: f,
            interpolate: cfg.interpolate,
        });
    }
    for on in [true, false] {
        arms.push(AblationArm {
            name: format!("rgb+3d-interpolation-{}", if on { "on" } else { "off" }),
            modalities: set("rgb+3d"),
            downsample: cfg.downsample,
            interpolate: on,
        });
    }
    arms
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub arm: String,
    pub modalities: String,
    pub downsample: usize,
    pub interpolation: bool,
    /// Category name, or `mean` for the average over categories.
    pub category: String,
    pub i_auroc: f64,
    pub p_auroc: f64,
}

/// Runs the given arms on every category in memory. Each distinct cloud
/// setting is extracted once and shared between arms.
pub fn run_arms(categories: &[CategoryData], cfg: &RunConfig, arms: &[AblationArm]) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if categories.is_empty() {
        return Err(Error::EmptyInput("no categories to ablate".into()));
    }
    let mut per_arm: Vec<Vec<AblationRow>> = vec![Vec::new(); arms.len()];
    for cat in categories {
        let needed = arms.iter().fold(
            ModalitySet {
                rgb: false,
                ps: false,
                cloud: false,
            },
            |acc, a| ModalitySet {
                rgb: acc.rgb || a.modalities.rgb,
                ps: acc.ps || a.modalities.ps,
                cloud: acc.cloud || a.modalities.cloud,
            },
        );
        let base = ExtractOptions {
            modalities: ModalitySet { cloud: false, ..needed },
            ..ExtractOptions::from_config(cfg)
        };
        let image_only = base.modalities.rgb || base.modalities.ps;
        let (train_img, test_img) = if image_only {
            (
                extract_all(&cat.train, &base, 0)?,
                extract_all(&cat.test, &base, cat.train.len())?,
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let mut clouds: BTreeMap<(usize, bool), (Vec<SampleFeatures>, Vec<SampleFeatures>)> = BTreeMap::new();
        for arm in arms.iter().filter(|a| a.modalities.cloud) {
            let key = (arm.downsample, arm.interpolate);
            if clouds.contains_key(&key) {
                continue;
            }
            let opts = ExtractOptions {
                modalities: "3d".parse()?,
                downsample: arm.downsample,
                interpolate: arm.interpolate,
                ..ExtractOptions::from_config(cfg)
            };
            let train = extract_all(&cat.train, &opts, 0)?;
            let test = extract_all(&cat.test, &opts, cat.train.len())?;
            clouds.insert(key, (train, test));
        }
        let merge = |img: &[SampleFeatures], cloud: Option<&Vec<SampleFeatures>>, n: usize| -> Vec<SampleFeatures> {
            (0..n)
                .map(|i| {
                    let mut f = match (img.get(i), cloud) {
                        (Some(f), _) => f.clone(),
                        (None, Some(c)) => c[i].clone(),
                        (None, None) => unreachable!("every arm uses at least one modality"),
                    };
                    if let Some(c) = cloud {
                        f.cloud = c[i].cloud.clone();
                    }
                    f
                })
                .collect()
        };
        for (k, arm) in arms.iter().enumerate() {
            let arm_cfg = RunConfig {
                modalities: arm.modalities,
                downsample: arm.downsample,
                interpolate: arm.interpolate,
                ..cfg.clone()
            };
            let cloud = clouds.get(&(arm.downsample, arm.interpolate));
            let cloud = if arm.modalities.cloud { cloud } else { None };
            let train = merge(&train_img, cloud.map(|c| &c.0), cat.train.len());
            let test = merge(&test_img, cloud.map(|c| &c.1), cat.test.len());
            let model = CategoryModel::fit(&cat.name, &train, &arm_cfg)?;
            let eval = evaluate_category(&model, &test)?;
            log::info!(
                "{} / {}: I-AUROC {:.4}, P-AUROC {:.4}",
                arm.name,
                cat.name,
                eval.i_auroc,
                eval.p_auroc
            );
            per_arm[k].push(AblationRow {
                arm: arm.name.clone(),
                modalities: arm.modalities.to_string(),
                downsample: arm.downsample,
                interpolation: arm.interpolate,
                category: cat.name.clone(),
                i_auroc: eval.i_auroc,
                p_auroc: eval.p_auroc,
            });
        }
    }
    let mut rows = Vec::new();
    for rs in per_arm {
        let n = rs.len() as f64;
        let mut mean = AblationRow {
            category: "mean".into(),
            i_auroc: rs.iter().map(|r| r.i_auroc).sum::<f64>() / n,
            p_auroc: rs.iter().map(|r| r.p_auroc).sum::<f64>() / n,
            ..rs[0].clone()
        };
        mean.arm = rs[0].arm.clone();
        rows.extend(rs);
        rows.push(mean);
    }
    Ok(rows)
}

/// Every ablation arm in memory.
pub fn run_ablation(categories: &[CategoryData], cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    run_arms(categories, cfg, &ablation_arms(cfg))
}

pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "arm",
        "modalities",
        "downsample",
        "interpolation",
        "category",
        "i_auroc",
        "p_auroc",
    ])
    .map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            r.arm.clone(),
            r.modalities.clone(),
            r.downsample.to_string(),
            if r.interpolation { "on" } else { "off" }.to_string(),
            r.category.clone(),
            r.i_auroc.to_string(),
            r.p_auroc.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs every ablation arm on `root` and writes `ablation.csv` to `cfg.out`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let root = cfg.require_root()?.to_path_buf();
    with_threads(cfg.threads, || {
        let data = load_dataset(&root)?;
        let rows = run_ablation(&data, cfg)?;
        write_ablation(&cfg.out.join(ABLATION_FILE), &rows)?;
        Ok(rows)
    })
}

/// Number of samples written per category, split and kind.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct SynthSummary {
    pub category: String,
    pub split: String,
    pub kind: String,
    pub count: usize,
}

fn summarize(rows: impl IntoIterator<Item = (String, String, String)>) -> Vec<SynthSummary> {
    let mut counts: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    for key in rows {
        *counts.entry(key).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((category, split, kind), count)| SynthSummary {
            category,
            split,
            kind,
            count,
        })
        .collect()
}

/// Renders `count` scenes from the spec at `spec_path` into
/// `out/<category>/<split>/<kind>/<id>`. Defect-free scenes go to
/// `train/good` unless `split` says `test`; scenes with a visible defect
/// always go to `test/<kind>`.
pub fn cmd_synth(
    spec_path: &Path,
    count: usize,
    out: &Path,
    category: &str,
    test_split: bool,
    seed: u64,
) -> Result<Vec<SynthSummary>> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SyntheticSceneSpec =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", spec_path.display())))?;
    spec.validate()?;
    if count == 0 {
        return Err(Error::Argument("sample count must be positive".into()));
    }
    let written = (0..count)
        .into_par_iter()
        .map(|i| {
            let s = generate_synthetic(&spec, sample_seed(seed, i))?.sample;
            let (split, kind) = match (&s.label, test_split) {
                (Label::Anomalous, _) => (TEST_DIR, s.defect_kind.clone().unwrap_or_else(|| "defect".into())),
                (Label::Normal, true) => (TEST_DIR, GOOD_DIR.to_string()),
                (Label::Normal, false) => (TRAIN_DIR, GOOD_DIR.to_string()),
            };
            write_sample(&out.join(category).join(split).join(&kind).join(&s.id), &s)?;
            Ok((category.to_string(), split.to_string(), kind))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(written))
}

/// Generates the synthetic benchmark and writes it as a dataset tree.
pub fn cmd_benchmark(cfg: &BenchmarkConfig, out: &Path) -> Result<Vec<SynthSummary>> {
    let cats = generate_benchmark(cfg)?;
    write_benchmark(out, &cats)?;
    let mut rows = Vec::new();
    for c in &cats {
        for _ in &c.train {
            rows.push((c.name.clone(), TRAIN_DIR.to_string(), GOOD_DIR.to_string()));
        }
        for s in &c.test {
            let kind = s.defect_kind.clone().unwrap_or_else(|| GOOD_DIR.to_string());
            rows.push((c.name.clone(), TEST_DIR.to_string(), kind));
        }
    }
    Ok(summarize(rows))
}

/// Where `cmd_ps_solve` puts the validity mask for a normal map at `path`.
pub fn valid_mask_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("normals");
    path.with_file_name(format!("{stem}_valid.png"))
}

/// Solves photometric stereo for the images in `lights_dir` (file-name order)
/// lit by the rig in `rig_file`, writing the normal map and its validity mask.
pub fn cmd_ps_solve(lights_dir: &Path, rig_file: &Path, out: &Path, shadow_threshold: f64) -> Result<NormalMap> {
    let mut paths: Vec<PathBuf> = fs::read_dir(lights_dir)
        .map_err(|e| Error::io(lights_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!("{} holds no images", lights_dir.display())));
    }
    let rig = LightingRig::read(rig_file)?;
    let images = paths.iter().map(|p| read_gray(p)).collect::<Result<Vec<_>>>()?;
    let stack = LightStack::new(images, rig)?;
    let nmap = solve_photometric_stereo(&stack, shadow_threshold)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_normal_map(out, &valid_mask_path(out), &nmap)?;
    Ok(nmap)
}
