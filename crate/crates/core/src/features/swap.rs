use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::map::FeatureMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapConfig {
    pub alpha: f64,
    pub blocks: usize,
    pub channel_fraction: f64,
    pub seed: u64,
}

impl Default for SwapConfig {
    fn default() -> Self {
        SwapConfig {
            alpha: 0.1,
            blocks: 4,
            channel_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SwapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Argument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.channel_fraction) {
            return Err(Error::Argument(format!(
                "channel fraction must lie in [0, 1], got {}",
                self.channel_fraction
            )));
        }
        if self.blocks == 0 {
            return Err(Error::Argument("block grid must be at least 1".into()));
        }
        Ok(())
    }
}

/// Channel and block indices exchanged by one swap call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapSubsets {
    pub channels: Vec<usize>,
    /// Block indices in row-major order over the `k × k` partition.
    pub blocks: Vec<usize>,
}

fn ceil_count(fraction: f64, total: usize) -> usize {
    // tolerate representation error such as 0.1 * 10 = 1.0000000000000002
    let x = fraction * total as f64;
    ((x - 1e-9).ceil().max(0.0) as usize).min(total)
}

/// Draws the channel and block subsets for `channels` channels.
pub fn swap_subsets(channels: usize, cfg: &SwapConfig) -> SwapSubsets {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let nblocks = cfg.blocks * cfg.blocks;
    let mut ch = sample(&mut rng, channels, ceil_count(cfg.channel_fraction, channels)).into_vec();
    let mut bl = sample(&mut rng, nblocks, ceil_count(cfg.alpha, nblocks)).into_vec();
    ch.sort_unstable();
    bl.sort_unstable();
    SwapSubsets {
        channels: ch,
        blocks: bl,
    }
}

/// `X^{c↔s}(base)`: `base` with the chosen channels, then the chosen blocks
/// (all channels), taken from `donor`.
fn exchange(base: &FeatureMap, donor: &FeatureMap, subsets: &SwapSubsets, k: usize) -> FeatureMap {
    let (h, w) = (base.height(), base.width());
    let (bh, bw) = (h / k, w / k);
    let mut out = base.clone();
    for &c in &subsets.channels {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, donor.get(c, y, x));
            }
        }
    }
    for &b in &subsets.blocks {
        let (by, bx) = (b / k, b % k);
        for c in 0..base.channels() {
            for y in by * bh..(by + 1) * bh {
                for x in bx * bw..(bx + 1) * bw {
                    out.set(c, y, x, donor.get(c, y, x));
                }
            }
        }
    }
    out
}

/// Channel-spatial swap between two aligned feature maps.
///
/// Returns `((1-α)·a + α·X(b), (1-α)·b + α·X(a))`, where `X(b)` is `b` with
/// the seed-chosen channels and blocks taken from `a` (and vice versa). Both
/// directions use the same subsets. The grid must divide evenly into
/// `blocks × blocks`; see [`channel_spatial_swap_padded`] otherwise.
pub fn channel_spatial_swap(a: &FeatureMap, b: &FeatureMap, cfg: &SwapConfig) -> Result<(FeatureMap, FeatureMap)> {
    cfg.validate()?;
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "cannot swap {}x{}x{} with {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    let k = cfg.blocks;
    if !a.height().is_multiple_of(k) || !a.width().is_multiple_of(k) {
        return Err(Error::Padding(format!(
            "grid {}x{} is not divisible into {k}x{k} blocks",
            a.height(),
            a.width()
        )));
    }
    if cfg.alpha == 0.0 {
        return Ok((a.clone(), b.clone()));
    }
    let subsets = swap_subsets(a.channels(), cfg);
    let xb = exchange(b, a, &subsets, k);
    let xa = exchange(a, b, &subsets, k);
    let alpha = cfg.alpha;
    let mut a_swap = a.clone();
    let mut b_swap = b.clone();
    for (o, (&x, &s)) in a_swap.data_mut().iter_mut().zip(a.data().iter().zip(xb.data())) {
        *o = (1.0 - alpha) * x + alpha * s;
    }
    for (o, (&x, &s)) in b_swap.data_mut().iter_mut().zip(b.data().iter().zip(xa.data())) {
        *o = (1.0 - alpha) * x + alpha * s;
    }
    Ok((a_swap, b_swap))
}

/// Pads both maps by edge replication to the next multiple of the block grid,
/// swaps, and crops back to the original size.
pub fn channel_spatial_swap_padded(
    a: &FeatureMap,
    b: &FeatureMap,
    cfg: &SwapConfig,
) -> Result<(FeatureMap, FeatureMap)> {
    cfg.validate()?;
    let k = cfg.blocks;
    let (h, w) = (a.height(), a.width());
    if h % k == 0 && w % k == 0 {
        return channel_spatial_swap(a, b, cfg);
    }
    if !a.same_shape(b) {
        return channel_spatial_swap(a, b, cfg);
    }
    let (ph, pw) = (h.div_ceil(k) * k, w.div_ceil(k) * k);
    let (pa, pb) = (pad_edge(a, ph, pw), pad_edge(b, ph, pw));
    let (sa, sb) = channel_spatial_swap(&pa, &pb, cfg)?;
    Ok((crop(&sa, h, w, a), crop(&sb, h, w, b)))
}

fn pad_edge(m: &FeatureMap, ph: usize, pw: usize) -> FeatureMap {
    let (h, w) = (m.height(), m.width());
    let mut out = FeatureMap::zeros(m.channels(), ph, pw, m.patch_size(), m.modality());
    for c in 0..m.channels() {
        for y in 0..ph {
            for x in 0..pw {
                out.set(c, y, x, m.get(c, y.min(h - 1), x.min(w - 1)));
            }
        }
    }
    out
}

fn crop(m: &FeatureMap, h: usize, w: usize, like: &FeatureMap) -> FeatureMap {
    let mut out = FeatureMap::zeros(like.channels(), h, w, like.patch_size(), like.modality());
    for c in 0..m.channels() {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, m.get(c, y, x));
            }
        }
    }
    out
}
