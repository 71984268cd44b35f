use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detection::OcsvmConfig;
use crate::error::{Error, Result};
use crate::features::{SwapConfig, TrainConfig};

/// Subset of `{rgb, ps, 3d}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModalitySet {
    pub rgb: bool,
    pub ps: bool,
    pub cloud: bool,
}

impl ModalitySet {
    pub const ALL: ModalitySet = ModalitySet {
        rgb: true,
        ps: true,
        cloud: true,
    };

    pub fn new(rgb: bool, ps: bool, cloud: bool) -> Result<Self> {
        if !(rgb || ps || cloud) {
            return Err(Error::Argument("modality set must not be empty".into()));
        }
        Ok(ModalitySet { rgb, ps, cloud })
    }

    /// Names of the scored streams, in bank order.
    pub fn streams(&self) -> Vec<Stream> {
        let mut s = Vec::new();
        if self.rgb {
            s.push(Stream::Rgb);
        }
        if self.ps {
            s.push(Stream::Ps);
        }
        if self.cloud {
            s.push(if self.rgb { Stream::Fused } else { Stream::Cloud });
        }
        s
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.rgb {
            parts.push("rgb");
        }
        if self.ps {
            parts.push("ps");
        }
        if self.cloud {
            parts.push("3d");
        }
        f.write_str(&parts.join(","))
    }
}

impl FromStr for ModalitySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mut rgb, mut ps, mut cloud) = (false, false, false);
        for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "rgb" | "2d" => rgb = true,
                "ps" => ps = true,
                "3d" | "cloud" | "cloud3d" => cloud = true,
                other => return Err(Error::Argument(format!("unknown modality '{other}'"))),
            }
        }
        ModalitySet::new(rgb, ps, cloud)
    }
}

impl TryFrom<String> for ModalitySet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModalitySet> for String {
    fn from(m: ModalitySet) -> String {
        m.to_string()
    }
}

/// One memory bank and its score stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Rgb,
    Ps,
    /// Point features alone, used when RGB is not part of the run.
    Cloud,
    /// Contrastively aligned RGB + point features.
    Fused,
}

impl Stream {
    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Rgb => "rgb",
            Stream::Ps => "ps",
            Stream::Cloud => "cloud",
            Stream::Fused => "fused",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Handcrafted,
    /// Per-sample tensors `rgb.d3ft` / `ps.d3ft` next to the sample files.
    Imported,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "handcrafted" => Ok(BackendKind::Handcrafted),
            "imported" => Ok(BackendKind::Imported),
            other => Err(Error::Argument(format!("unknown backend '{other}'"))),
        }
    }
}

/// What the photometric modality contributes as an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsInput {
    Normals,
    /// Integrated relative depth with its two gradients.
    Depth,
}

/// Every knob of a run. Missing fields in a config file take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub root: Option<PathBuf>,
    pub out: PathBuf,
    pub modalities: ModalitySet,
    pub backend: BackendKind,
    pub patch_size: usize,
    pub alpha: f64,
    pub blocks: usize,
    pub channel_frac: f64,
    pub coreset: f64,
    pub nu: f64,
    pub ocsvm_epochs: usize,
    pub ocsvm_lr: f64,
    /// Contrastive fusion epochs.
    pub epochs: usize,
    /// Contrastive fusion learning rate.
    pub lr: f64,
    pub fusion_batch: usize,
    pub projection_dim: usize,
    pub ps_input: PsInput,
    pub shadow_threshold: f64,
    /// Neighborhood radius for point descriptors, in patch widths.
    pub point_radius: f64,
    pub interpolate: bool,
    pub downsample: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            root: None,
            out: PathBuf::from("d3fuse-out"),
            modalities: ModalitySet::ALL,
            backend: BackendKind::Handcrafted,
            patch_size: 8,
            alpha: 0.1,
            blocks: 4,
            channel_frac: 0.1,
            coreset: 0.1,
            nu: 0.1,
            ocsvm_epochs: 500,
            ocsvm_lr: 0.5,
            epochs: 20,
            lr: 0.05,
            fusion_batch: 0,
            projection_dim: 64,
            ps_input: PsInput::Normals,
            shadow_threshold: 0.02,
            point_radius: 1.0,
            interpolate: true,
            downsample: 1,
            sigma: crate::detection::DEFAULT_SIGMA,
            seed: 0,
            threads: 0,
        }
    }
}

impl RunConfig {
    /// Reads a JSON config file; absent fields keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.patch_size == 0 {
            return arg("patch size must be positive".into());
        }
        self.swap().validate()?;
        if !(self.coreset > 0.0 && self.coreset <= 1.0) {
            return arg(format!("coreset ratio must lie in (0, 1], got {}", self.coreset));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return arg(format!("nu must lie in (0, 1], got {}", self.nu));
        }
        if !(self.lr > 0.0) || !(self.ocsvm_lr > 0.0) {
            return arg("learning rates must be positive".into());
        }
        if self.projection_dim == 0 {
            return arg("projection dimension must be positive".into());
        }
        if !(0.0..1.0).contains(&self.shadow_threshold) {
            return arg(format!(
                "shadow threshold must lie in [0, 1), got {}",
                self.shadow_threshold
            ));
        }
        if !(self.point_radius > 0.0) {
            return arg("point radius must be positive".into());
        }
        if self.downsample == 0 {
            return arg("downsampling factor must be at least 1".into());
        }
        if !(self.sigma >= 0.0) {
            return arg("blur sigma must be non-negative".into());
        }
        Ok(())
    }

    pub fn swap(&self) -> SwapConfig {
        SwapConfig {
            alpha: self.alpha,
            blocks: self.blocks,
            channel_fraction: self.channel_frac,
            seed: self.seed,
        }
    }

    pub fn ocsvm(&self) -> OcsvmConfig {
        OcsvmConfig {
            nu: self.nu,
            epochs: self.ocsvm_epochs,
            lr: self.ocsvm_lr,
        }
    }

    pub fn fusion(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.fusion_batch,
            seed: self.seed,
        }
    }

    pub fn require_root(&self) -> Result<&Path> {
        self.root
            .as_deref()
            .ok_or_else(|| Error::Argument("a dataset root is required (--root)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_sets_parse_and_print() {
        let m: ModalitySet = "rgb,3d".parse().unwrap();
        assert_eq!(m, ModalitySet::new(true, false, true).unwrap());
        assert_eq!(m.to_string(), "rgb,3d");
        assert_eq!(m.streams(), vec![Stream::Rgb, Stream::Fused]);
        assert_eq!("3d".parse::<ModalitySet>().unwrap().streams(), vec![Stream::Cloud]);
        assert_eq!(ModalitySet::ALL.streams(), vec![Stream::Rgb, Stream::Ps, Stream::Fused]);
        assert!("".parse::<ModalitySet>().is_err());
        assert!("rgb,depth".parse::<ModalitySet>().is_err());
    }

    #[test]
    fn config_file_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"modalities": "rgb,ps", "patch_size": 4}"#).unwrap();
        assert_eq!(c.patch_size, 4);
        assert_eq!(c.coreset, RunConfig::default().coreset);
        assert!(!c.modalities.cloud);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.validate().unwrap();
        c.coreset = 0.0;
        assert!(c.validate().is_err());
        let c = RunConfig {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
