use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::detection::{
    auroc, fuse_segmentation, image_score, score_patches, score_patches_where, Decision, MemoryBank, OneClassModel,
    PatchScores,
};
use crate::error::{Error, Result};
use crate::features::{
    channel_spatial_swap_padded, train_fusion, ChannelNormalizer, ContrastiveBatch, FeatureMap, FusionModel, Modality,
    ProjectionHead, SwapConfig,
};
use crate::raster::Raster;

use super::config::{ModalitySet, RunConfig, Stream};
use super::extract::SampleFeatures;

pub const MODEL_FILE: &str = "model.json";
pub const BANKS_DIR: &str = "banks";
const FORMAT: &str = "d3fuse-model/1";

/// Everything learned for one category. Banks are stored next to the JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryModel {
    pub name: String,
    pub modalities: ModalitySet,
    pub patch_size: usize,
    pub sigma: f64,
    pub train_samples: usize,
    pub normalizers: BTreeMap<Modality, ChannelNormalizer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swap: Option<SwapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<FusionModel>,
    pub streams: Vec<Stream>,
    #[serde(skip)]
    pub banks: Vec<MemoryBank>,
    /// Decision model over per-stream image scores.
    pub image_model: OneClassModel,
    /// Decision model over per-stream patch distances.
    pub pixel_model: OneClassModel,
}

/// Per-sample maps after normalization and swapping, before fusion.
struct Prepared {
    rgb: Option<FeatureMap>,
    ps: Option<FeatureMap>,
    cloud: Option<FeatureMap>,
}

fn modality_map(f: &SampleFeatures, m: Modality) -> Result<&FeatureMap> {
    let map = match m {
        Modality::Rgb => f.rgb.as_ref(),
        Modality::Ps => f.ps.as_ref(),
        _ => f.cloud.as_ref(),
    };
    map.ok_or_else(|| Error::Validation(format!("sample {} has no {m} features", f.id)))
}

fn unfitted() -> OneClassModel {
    OneClassModel {
        mean: Vec::new(),
        scale: Vec::new(),
        decision: Decision::Mean,
    }
}

fn requested(modalities: ModalitySet) -> Vec<Modality> {
    let mut out = Vec::new();
    if modalities.rgb {
        out.push(Modality::Rgb);
    }
    if modalities.ps {
        out.push(Modality::Ps);
    }
    if modalities.cloud {
        out.push(Modality::Cloud3d);
    }
    out
}

impl CategoryModel {
    fn prepare(&self, f: &SampleFeatures) -> Result<Prepared> {
        let norm = |m: Modality| -> Result<Option<FeatureMap>> {
            match self.normalizers.get(&m) {
                Some(n) => Ok(Some(n.apply(modality_map(f, m)?)?)),
                None => Ok(None),
            }
        };
        let (mut rgb, mut ps, cloud) = (norm(Modality::Rgb)?, norm(Modality::Ps)?, norm(Modality::Cloud3d)?);
        if let (Some(cfg), Some(a), Some(b)) = (&self.swap, &rgb, &ps) {
            let (a2, b2) = channel_spatial_swap_padded(a, b, cfg)?;
            rgb = Some(a2);
            ps = Some(b2);
        }
        Ok(Prepared { rgb, ps, cloud })
    }

    fn stream_maps(&self, p: &Prepared) -> Result<Vec<FeatureMap>> {
        self.streams
            .iter()
            .map(|s| {
                let missing = || Error::Validation(format!("stream {} has no input", s.as_str()));
                match s {
                    Stream::Rgb => p.rgb.clone().ok_or_else(missing),
                    Stream::Ps => p.ps.clone().ok_or_else(missing),
                    Stream::Cloud => p.cloud.clone().ok_or_else(missing),
                    Stream::Fused => {
                        let fusion = self.fusion.as_ref().ok_or_else(missing)?;
                        let (a, b) = (
                            p.rgb.as_ref().ok_or_else(missing)?,
                            p.cloud.as_ref().ok_or_else(missing)?,
                        );
                        fusion.fuse(a, b)
                    }
                }
            })
            .collect()
    }

    /// Fits a category from the features of its normal training samples.
    pub fn fit(name: &str, train: &[SampleFeatures], cfg: &RunConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput(format!("category {name} has no training samples")));
        }
        let mods = requested(cfg.modalities);
        let mut normalizers = BTreeMap::new();
        for &m in &mods {
            let maps = train
                .iter()
                .map(|f| modality_map(f, m).cloned())
                .collect::<Result<Vec<_>>>()?;
            normalizers.insert(m, ChannelNormalizer::fit(&maps)?);
        }
        let mut model = CategoryModel {
            name: name.to_string(),
            modalities: cfg.modalities,
            patch_size: cfg.patch_size,
            sigma: cfg.sigma,
            train_samples: train.len(),
            normalizers,
            swap: (cfg.modalities.rgb && cfg.modalities.ps).then(|| cfg.swap()),
            fusion: None,
            streams: cfg.modalities.streams(),
            banks: Vec::new(),
            image_model: unfitted(),
            pixel_model: unfitted(),
        };
        let prepared = train.par_iter().map(|f| model.prepare(f)).collect::<Result<Vec<_>>>()?;

        if model.streams.contains(&Stream::Fused) {
            let pairs: Vec<(&FeatureMap, &FeatureMap)> = prepared
                .iter()
                .map(|p| {
                    (
                        p.rgb.as_ref().expect("rgb requested"),
                        p.cloud.as_ref().expect("3d requested"),
                    )
                })
                .collect();
            let batch = ContrastiveBatch::from_maps(&pairs)?;
            let head_2d = ProjectionHead::new(pairs[0].0.channels(), cfg.projection_dim, cfg.seed)?;
            let head_3d = ProjectionHead::new(pairs[0].1.channels(), cfg.projection_dim, cfg.seed.wrapping_add(1))?;
            let fusion = train_fusion(&batch, head_2d, head_3d, &cfg.fusion())?;
            log::info!(
                "{name}: contrastive objective {:.6} -> {:.6} over {} epochs",
                fusion.loss_curve[0],
                fusion.loss_curve[fusion.loss_curve.len() - 1],
                cfg.epochs
            );
            model.fusion = Some(fusion);
        }

        let streams = prepared
            .par_iter()
            .map(|p| model.stream_maps(p))
            .collect::<Result<Vec<_>>>()?;
        let mut banks = Vec::new();
        for s in 0..model.streams.len() {
            let maps: Vec<&FeatureMap> = streams.iter().map(|v| &v[s]).collect();
            banks.push(MemoryBank::build(&maps, cfg.coreset, cfg.seed)?);
        }
        model.banks = banks;

        let n = train.len();
        let scored = streams
            .par_iter()
            .enumerate()
            .map(|(i, maps)| model.leave_one_out(i, n, maps))
            .collect::<Result<Vec<_>>>()?;
        let image_rows: Vec<Vec<f64>> = scored
            .iter()
            .map(|per| per.iter().map(image_score).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let mut patch_rows = Vec::new();
        for per in &scored {
            for p in 0..per[0].nearest.len() {
                patch_rows.push(per.iter().map(|s| s.nearest[p]).collect::<Vec<_>>());
            }
        }
        model.image_model = OneClassModel::fit(&image_rows, &cfg.ocsvm())?;
        model.pixel_model = OneClassModel::fit(&patch_rows, &cfg.ocsvm())?;
        Ok(model)
    }

    /// Scores of training sample `i` against banks that exclude its own
    /// patches, so the decision models see honest normal distances.
    fn leave_one_out(&self, i: usize, n: usize, maps: &[FeatureMap]) -> Result<Vec<PatchScores>> {
        maps.iter()
            .zip(&self.banks)
            .map(|(map, bank)| {
                let per = map.patch_count() as u64;
                let own = |k: u64| k / per == i as u64;
                if n > 1 && bank.coreset_indices().iter().any(|&k| !own(k)) {
                    score_patches_where(bank, map, own)
                } else {
                    score_patches(bank, map)
                }
            })
            .collect()
    }

    /// Patch distances of one sample in every stream.
    pub fn patch_scores(&self, f: &SampleFeatures) -> Result<Vec<PatchScores>> {
        let maps = self.stream_maps(&self.prepare(f)?)?;
        maps.iter().zip(&self.banks).map(|(m, b)| score_patches(b, m)).collect()
    }

    /// Image-level anomaly score and pixel-level anomaly map.
    pub fn score(&self, f: &SampleFeatures) -> Result<Scored> {
        let per = self.patch_scores(f)?;
        let stream_scores = per.iter().map(image_score).collect::<Result<Vec<_>>>()?;
        let score = self.image_model.score(&stream_scores)?;
        let refs: Vec<&PatchScores> = per.iter().collect();
        let map = fuse_segmentation(&refs, &self.pixel_model, self.patch_size, f.height, f.width, self.sigma)?;
        Ok(Scored {
            score,
            stream_scores,
            map,
        })
    }

    fn bank_path(dir: &Path, name: &str, stream: Stream) -> std::path::PathBuf {
        dir.join(BANKS_DIR).join(format!("{name}.{}.bank", stream.as_str()))
    }
}

#[derive(Debug, Clone)]
pub struct Scored {
    pub score: f64,
    pub stream_scores: Vec<f64>,
    /// Single-channel map at image resolution.
    pub map: Raster,
}

/// Outcome of scoring one test sample.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub id: String,
    pub label: Label,
    pub defect_kind: Option<String>,
    pub scored: Scored,
}

#[derive(Debug, Clone)]
pub struct CategoryEval {
    pub name: String,
    pub i_auroc: f64,
    pub p_auroc: f64,
    pub samples: Vec<SampleOutcome>,
}

/// Scores every test sample and computes image- and pixel-level AUROC.
pub fn evaluate_category(model: &CategoryModel, test: &[SampleFeatures]) -> Result<CategoryEval> {
    let outcomes = test
        .par_iter()
        .map(|f| {
            Ok(SampleOutcome {
                id: f.id.clone(),
                label: f.label,
                defect_kind: f.defect_kind.clone(),
                scored: model.score(f)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = outcomes.iter().map(|o| o.scored.score).collect();
    let labels: Vec<bool> = test.iter().map(|f| f.label == Label::Anomalous).collect();
    let i_auroc = auroc(&scores, &labels)?;
    let mut pixels = Vec::new();
    let mut truth = Vec::new();
    for (f, o) in test.iter().zip(&outcomes) {
        pixels.extend_from_slice(o.scored.map.data());
        match (&f.mask, f.label) {
            (Some(m), _) => {
                if (m.width(), m.height()) != (f.width, f.height) {
                    return Err(Error::Shape(format!(
                        "sample {}: mask is {}x{}, image is {}x{}",
                        f.id,
                        m.height(),
                        m.width(),
                        f.height,
                        f.width
                    )));
                }
                truth.extend_from_slice(m.bits());
            }
            (None, Label::Normal) => truth.extend(std::iter::repeat_n(false, f.width * f.height)),
            (None, Label::Anomalous) => {
                return Err(Error::Validation(format!("anomalous sample {} has no mask", f.id)));
            }
        }
    }
    let p_auroc = auroc(&pixels, &truth)?;
    Ok(CategoryEval {
        name: model.name.clone(),
        i_auroc,
        p_auroc,
        samples: outcomes,
    })
}

/// A fitted model for every category plus the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub config: RunConfig,
    pub categories: Vec<CategoryModel>,
}

impl ModelBundle {
    /// Paths and thread count are dropped so the bundle depends only on what
    /// was learned.
    pub fn new(config: &RunConfig, categories: Vec<CategoryModel>) -> Self {
        let config = RunConfig {
            root: None,
            out: Default::default(),
            threads: 0,
            ..config.clone()
        };
        ModelBundle {
            format: FORMAT.to_string(),
            config,
            categories,
        }
    }

    pub fn category(&self, name: &str) -> Option<&CategoryModel> {
        self.categories.iter().find(|c| c.name == name)
    }

    /// Writes `model.json` and one bank file per category and stream.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join(BANKS_DIR)).map_err(|e| Error::io(dir, e))?;
        for c in &self.categories {
            for (s, bank) in c.streams.iter().zip(&c.banks) {
                bank.write(&CategoryModel::bank_path(dir, &c.name, *s))?;
            }
        }
        let path = dir.join(MODEL_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut bundle: ModelBundle =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if bundle.format != FORMAT {
            return Err(Error::Format(format!(
                "{}: unsupported model format '{}'",
                path.display(),
                bundle.format
            )));
        }
        for c in &mut bundle.categories {
            c.banks = c
                .streams
                .iter()
                .map(|s| MemoryBank::read(&CategoryModel::bank_path(dir, &c.name, *s)))
                .collect::<Result<_>>()?;
            let want = c.pixel_model.dim();
            if c.streams.len() != want || c.image_model.dim() != want {
                return Err(Error::Format(format!(
                    "category {}: {} streams but a {want}-input decision model",
                    c.name,
                    c.streams.len()
                )));
            }
        }
        Ok(bundle)
    }
}
