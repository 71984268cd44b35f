use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-9;
/// Smallest admissible eigenvalue ratio of `LᵀL` before the rig counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// A calibrated set of `k >= 3` unit light directions, one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct LightingRig {
    directions: Vec<Vector3<f64>>,
}

impl LightingRig {
    /// Builds a rig from unit directions. Rows must have norm `1 ± 1e-9` and
    /// span all of ℝ³.
    pub fn new(directions: Vec<[f64; 3]>) -> Result<Self> {
        let directions: Vec<Vector3<f64>> = directions.into_iter().map(Vector3::from).collect();
        for (i, d) in directions.iter().enumerate() {
            let n = d.norm();
            if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::Argument(format!(
                    "light {i} has norm {n}, expected a unit vector"
                )));
            }
        }
        Self::checked(directions)
    }

    /// Builds a rig from arbitrary non-zero directions, normalizing each row.
    pub fn from_unnormalized(directions: Vec<[f64; 3]>) -> Result<Self> {
        let mut out = Vec::with_capacity(directions.len());
        for (i, d) in directions.into_iter().enumerate() {
            let v = Vector3::from(d);
            let n = v.norm();
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::Argument(format!("light {i} has zero or non-finite length")));
            }
            out.push(v / n);
        }
        Self::checked(out)
    }

    /// `count` lights tilted `tilt_deg` from the zenith at evenly spaced azimuths,
    /// starting at azimuth 0 (the +x axis).
    pub fn ring(count: usize, tilt_deg: f64) -> Result<Self> {
        let tilt = tilt_deg.to_radians();
        let dirs = (0..count)
            .map(|i| {
                let az = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                [tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos()]
            })
            .collect();
        Self::from_unnormalized(dirs)
    }

    fn checked(directions: Vec<Vector3<f64>>) -> Result<Self> {
        if directions.len() < 3 {
            return Err(Error::DegenerateRig(format!(
                "need at least 3 lights, got {}",
                directions.len()
            )));
        }
        let rig = LightingRig { directions };
        let eig = rig.gram().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(min > RANK_TOLERANCE * max) {
            return Err(Error::DegenerateRig(format!(
                "light directions do not span 3D (eigenvalues of LᵀL: {:?})",
                eig.eigenvalues.as_slice()
            )));
        }
        Ok(rig)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn direction(&self, i: usize) -> Vector3<f64> {
        self.directions[i]
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.directions
    }

    /// `LᵀL`.
    pub fn gram(&self) -> Matrix3<f64> {
        self.directions
            .iter()
            .fold(Matrix3::zeros(), |acc, d| acc + d * d.transpose())
    }

    /// Applies the same rotation to every light.
    pub fn rotated(&self, rotation: &Matrix3<f64>) -> Result<Self> {
        Self::from_unnormalized(self.directions.iter().map(|d| (rotation * d).into()).collect())
    }

    /// Parses the plain-text rig format: one light per line, three
    /// whitespace-separated reals. Blank lines and `#` comments are skipped.
    /// Rows are normalized.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dirs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("rig line {}: {e}", lineno + 1)))?;
            if vals.len() != 3 {
                return Err(Error::Format(format!(
                    "rig line {}: expected 3 values, got {}",
                    lineno + 1,
                    vals.len()
                )));
            }
            dirs.push([vals[0], vals[1], vals[2]]);
        }
        Self::from_unnormalized(dirs)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for d in &self.directions {
            s.push_str(&format!("{} {} {}\n", d.x, d.y, d.z));
        }
        s
    }
}

impl TryFrom<Vec<[f64; 3]>> for LightingRig {
    type Error = Error;

    fn try_from(v: Vec<[f64; 3]>) -> Result<Self> {
        LightingRig::from_unnormalized(v)
    }
}

impl From<LightingRig> for Vec<[f64; 3]> {
    fn from(r: LightingRig) -> Self {
        r.directions.iter().map(|d| [d.x, d.y, d.z]).collect()
    }
}
