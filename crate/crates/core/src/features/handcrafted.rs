use std::f64::consts::PI;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::imported::read_feature_tensor;
use super::map::{FeatureMap, Modality};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Number of orientation bins in the gradient histogram.
pub const ORIENTATION_BINS: usize = 8;
/// Descriptor length per input channel: mean, std, histogram, min, max.
pub const DESCRIPTOR_LEN: usize = 2 + ORIENTATION_BINS + 2;

/// Source of patch features for one image-like modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "path")]
pub enum Backend {
    /// Deterministic per-patch statistics computed here.
    Handcrafted,
    /// A precomputed tensor file (see [`read_feature_tensor`]).
    Imported(PathBuf),
}

/// Extracts a patch-feature map from an image or normal-map raster.
pub fn extract_features(
    input: &Raster,
    backend: &Backend,
    patch_size: usize,
    modality: Modality,
) -> Result<FeatureMap> {
    if patch_size == 0 {
        return Err(Error::Argument("patch size must be positive".into()));
    }
    if input.width() < patch_size || input.height() < patch_size {
        return Err(Error::Argument(format!(
            "image {}x{} is smaller than patch size {patch_size}",
            input.width(),
            input.height()
        )));
    }
    match backend {
        Backend::Handcrafted => Ok(handcrafted_features(input, patch_size, modality)),
        Backend::Imported(path) => {
            let map = read_feature_tensor(path, patch_size, modality)?;
            let (gh, gw) = (input.height() / patch_size, input.width() / patch_size);
            if map.height() != gh || map.width() != gw {
                return Err(Error::Format(format!(
                    "{}: tensor grid {}x{} does not match {}x{} for a {}x{} image at patch size {patch_size}",
                    path.display(),
                    map.height(),
                    map.width(),
                    gh,
                    gw,
                    input.height(),
                    input.width()
                )));
            }
            Ok(map)
        }
    }
}

/// Orientation bin of a gradient, bins centred on multiples of 45°.
#[inline]
pub fn orientation_bin(gx: f64, gy: f64) -> usize {
    let step = 2.0 * PI / ORIENTATION_BINS as f64;
    let theta = gy.atan2(gx);
    let b = ((theta + step / 2.0) / step).floor() as i64;
    b.rem_euclid(ORIENTATION_BINS as i64) as usize
}

/// Per-patch `[mean, std, hist_0..hist_7, min, max]` for every channel.
///
/// Gradients are central differences with clamped borders; the histogram
/// accumulates gradient magnitude per orientation bin, divided by the number
/// of pixels in the patch.
pub fn handcrafted_features(input: &Raster, patch_size: usize, modality: Modality) -> FeatureMap {
    let (w, h) = (input.width(), input.height());
    let (gw, gh) = (w / patch_size, h / patch_size);
    let out_c = input.channels() * DESCRIPTOR_LEN;
    let npix = (patch_size * patch_size) as f64;

    let per_channel: Vec<Vec<f64>> = (0..input.channels())
        .into_par_iter()
        .map(|c| {
            let ch = input.channel(c);
            let at = |y: usize, x: usize| ch[y * w + x];
            let mut out = vec![0.0; DESCRIPTOR_LEN * gh * gw];
            for py in 0..gh {
                for px in 0..gw {
                    let mut sum = 0.0;
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    let mut hist = [0.0; ORIENTATION_BINS];
                    for y in py * patch_size..(py + 1) * patch_size {
                        for x in px * patch_size..(px + 1) * patch_size {
                            let v = at(y, x);
                            sum += v;
                            min = min.min(v);
                            max = max.max(v);
                            let gx = 0.5 * (at(y, (x + 1).min(w - 1)) - at(y, x.saturating_sub(1)));
                            let gy = 0.5 * (at((y + 1).min(h - 1), x) - at(y.saturating_sub(1), x));
                            let mag = (gx * gx + gy * gy).sqrt();
                            if mag > 0.0 {
                                hist[orientation_bin(gx, gy)] += mag;
                            }
                        }
                    }
                    // a flat patch reports its value exactly rather than a rounded sum
                    let mean = if min == max { min } else { sum / npix };
                    let mut var = 0.0;
                    for y in py * patch_size..(py + 1) * patch_size {
                        for x in px * patch_size..(px + 1) * patch_size {
                            var += (at(y, x) - mean).powi(2);
                        }
                    }
                    let std = (var / npix).sqrt();
                    let p = py * gw + px;
                    let plane = gh * gw;
                    out[p] = mean;
                    out[plane + p] = std;
                    for (b, hv) in hist.iter().enumerate() {
                        out[(2 + b) * plane + p] = hv / npix;
                    }
                    out[(2 + ORIENTATION_BINS) * plane + p] = min;
                    out[(3 + ORIENTATION_BINS) * plane + p] = max;
                }
            }
            out
        })
        .collect();

    let data = per_channel.concat();
    FeatureMap::new(out_c, gh, gw, patch_size, modality, data).expect("descriptor layout is consistent")
}
