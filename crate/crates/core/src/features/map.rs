use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which sensor stream a feature map (or memory bank) describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Ps,
    Cloud3d,
    Fused,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Ps => "ps",
            Modality::Cloud3d => "cloud3d",
            Modality::Fused => "fused",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "ps" => Ok(Modality::Ps),
            "cloud3d" | "3d" => Ok(Modality::Cloud3d),
            "fused" => Ok(Modality::Fused),
            other => Err(Error::Format(format!("unknown modality tag '{other}'"))),
        }
    }
}

/// A `C × H' × W'` grid of patch descriptors, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    patch_size: usize,
    modality: Modality,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        patch_size: usize,
        modality: Modality,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("feature map needs at least one channel".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("feature value {i} is not finite")));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            patch_size,
            modality,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, patch_size: usize, modality: Modality) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            patch_size,
            modality,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Builds a map from one vector per patch, patches in row-major order.
    pub fn from_patch_vectors(
        vectors: &[Vec<f64>],
        height: usize,
        width: usize,
        patch_size: usize,
        modality: Modality,
    ) -> Result<Self> {
        if vectors.len() != height * width {
            return Err(Error::Shape(format!(
                "{} patch vectors for a {height}x{width} grid",
                vectors.len()
            )));
        }
        let channels = vectors.first().map_or(0, Vec::len);
        let mut data = vec![0.0; channels * height * width];
        for (p, v) in vectors.iter().enumerate() {
            if v.len() != channels {
                return Err(Error::Shape(format!(
                    "patch {p} has {} channels, expected {channels}",
                    v.len()
                )));
            }
            for (c, x) in v.iter().enumerate() {
                data[c * height * width + p] = *x;
            }
        }
        Self::new(channels, height, width, patch_size, modality, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    pub fn patch_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Descriptor of patch `p` (row-major patch index).
    pub fn patch_vector(&self, p: usize) -> Vec<f64> {
        let n = self.patch_count();
        (0..self.channels).map(|c| self.data[c * n + p]).collect()
    }

    pub fn patch_vectors(&self) -> Vec<Vec<f64>> {
        (0..self.patch_count()).map(|p| self.patch_vector(p)).collect()
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Stacks the channels of several maps sharing one grid.
    pub fn concat(maps: &[&FeatureMap], modality: Modality) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::EmptyInput("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for m in maps {
            if m.height != first.height || m.width != first.width {
                return Err(Error::Shape(format!(
                    "cannot concatenate {}x{} with {}x{} grids",
                    m.height, m.width, first.height, first.width
                )));
            }
            data.extend_from_slice(&m.data);
            channels += m.channels;
        }
        Self::new(channels, first.height, first.width, first.patch_size, modality, data)
    }
}

/// Per-channel affine standardization fitted on training feature maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelNormalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ChannelNormalizer {
    /// z-score statistics over every patch of every map. Channels with zero
    /// spread keep unit scale.
    pub fn fit(maps: &[FeatureMap]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::EmptyInput("no feature maps to normalize".into()))?;
        let c = first.channels();
        let mut mean = vec![0.0; c];
        let mut m2 = vec![0.0; c];
        let mut count = 0.0;
        for m in maps {
            if m.channels() != c {
                return Err(Error::Shape(format!(
                    "normalizer expects {c} channels, got {}",
                    m.channels()
                )));
            }
            let n = m.patch_count();
            for ch in 0..c {
                let s: f64 = m.data[ch * n..(ch + 1) * n].iter().sum();
                mean[ch] += s;
            }
            count += n as f64;
        }
        mean.iter_mut().for_each(|v| *v /= count);
        for m in maps {
            let n = m.patch_count();
            for ch in 0..c {
                m2[ch] += m.data[ch * n..(ch + 1) * n]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let scale = m2
            .iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(ChannelNormalizer { mean, scale })
    }

    pub fn apply(&self, map: &FeatureMap) -> Result<FeatureMap> {
        if map.channels() != self.mean.len() {
            return Err(Error::Shape(format!(
                "normalizer expects {} channels, got {}",
                self.mean.len(),
                map.channels()
            )));
        }
        let n = map.patch_count();
        let mut out = map.clone();
        for ch in 0..map.channels() {
            for v in &mut out.data[ch * n..(ch + 1) * n] {
                *v = (*v - self.mean[ch]) / self.scale[ch];
            }
        }
        Ok(out)
    }
}
