use serde::{Deserialize, Serialize};

use super::bank::MemoryBank;
use crate::error::{Error, Result};
use crate::features::FeatureMap;

/// Upper clamp on the nearest/second-nearest gap used by [`image_score`].
pub const MAX_GAP: f64 = 10.0;

/// Per-patch nearest-neighbor distances on the `H' × W'` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchScores {
    pub height: usize,
    pub width: usize,
    /// Distance to the nearest bank vector, row-major.
    pub nearest: Vec<f64>,
    /// Distance to the second-nearest bank vector; `None` for one-vector banks.
    pub second: Vec<Option<f64>>,
}

impl PatchScores {
    pub fn new(height: usize, width: usize, nearest: Vec<f64>) -> Result<Self> {
        let n = nearest.len();
        Self::with_second(height, width, nearest, vec![None; n])
    }

    pub fn with_second(height: usize, width: usize, nearest: Vec<f64>, second: Vec<Option<f64>>) -> Result<Self> {
        if nearest.len() != height * width || second.len() != nearest.len() {
            return Err(Error::Shape(format!(
                "{} scores for a {height}x{width} grid",
                nearest.len()
            )));
        }
        if nearest.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Argument(
                "patch distances must be finite and non-negative".into(),
            ));
        }
        Ok(PatchScores {
            height,
            width,
            nearest,
            second,
        })
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.nearest[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.nearest.iter().copied().fold(0.0, f64::max)
    }
}

/// Scores every patch of `query` against `bank`, skipping bank vectors whose
/// coreset index satisfies `exclude` (used for leave-one-out scoring of
/// training samples).
pub fn score_patches_where(
    bank: &MemoryBank,
    query: &FeatureMap,
    exclude: impl Fn(u64) -> bool,
) -> Result<PatchScores> {
    if query.channels() != bank.dim() {
        return Err(Error::Shape(format!(
            "query has {} channels, bank has {}",
            query.channels(),
            bank.dim()
        )));
    }
    let mut nearest = Vec::with_capacity(query.patch_count());
    let mut second = Vec::with_capacity(query.patch_count());
    for v in query.patch_vectors() {
        let n = bank
            .neighbors_where(&v, &exclude)?
            .ok_or_else(|| Error::EmptyInput("every bank vector was excluded".into()))?;
        nearest.push(n.nearest);
        second.push(n.second);
    }
    PatchScores::with_second(query.height(), query.width(), nearest, second)
}

/// Exact distance from every patch of `query` to its nearest bank vector.
pub fn score_patches(bank: &MemoryBank, query: &FeatureMap) -> Result<PatchScores> {
    score_patches_where(bank, query, |_| false)
}

/// Image-level score: the largest patch distance `d*`, damped by
/// `1 - exp(-gap)` where `gap` is the second-nearest minus nearest bank
/// distance at that patch, clamped to `[0, 10]`. When the patch has no second
/// neighbor (one-vector bank) `d*` is returned as is. Ties for the maximum go
/// to the first patch.
pub fn image_score(scores: &PatchScores) -> Result<f64> {
    if scores.nearest.is_empty() {
        return Err(Error::EmptyInput("patch score map is empty".into()));
    }
    let mut arg = 0;
    for (i, &d) in scores.nearest.iter().enumerate() {
        if d > scores.nearest[arg] {
            arg = i;
        }
    }
    let d = scores.nearest[arg];
    Ok(match scores.second[arg] {
        None => d,
        Some(d2) => {
            let gap = (d2 - d).clamp(0.0, MAX_GAP);
            d * (1.0 - (-gap).exp())
        }
    })
}
