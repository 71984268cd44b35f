use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rig::LightingRig;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// `k` single-channel images of one scene, one per light of `rig`.
#[derive(Debug, Clone)]
pub struct LightStack {
    images: Vec<Raster>,
    rig: LightingRig,
}

impl LightStack {
    pub fn new(images: Vec<Raster>, rig: LightingRig) -> Result<Self> {
        if images.len() != rig.len() {
            return Err(Error::Shape(format!(
                "{} light images but the rig has {} lights",
                images.len(),
                rig.len()
            )));
        }
        let first = &images[0];
        for (i, im) in images.iter().enumerate() {
            if im.channels() != 1 {
                return Err(Error::Shape(format!(
                    "light image {i} has {} channels, expected 1",
                    im.channels()
                )));
            }
            if !im.same_dims(first) {
                return Err(Error::Shape(format!(
                    "light image {i} is {}x{}, expected {}x{}",
                    im.width(),
                    im.height(),
                    first.width(),
                    first.height()
                )));
            }
        }
        Ok(LightStack { images, rig })
    }

    pub fn images(&self) -> &[Raster] {
        &self.images
    }

    pub fn rig(&self) -> &LightingRig {
        &self.rig
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }
}

/// Per-pixel unit normals, albedo and validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<[f64; 3]>,
    albedo: Vec<f64>,
    valid: Vec<bool>,
}

impl NormalMap {
    pub fn new(
        width: usize,
        height: usize,
        normals: Vec<[f64; 3]>,
        albedo: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if normals.len() != n || albedo.len() != n || valid.len() != n {
            return Err(Error::Shape(format!(
                "normal map {height}x{width} needs {n} entries per field"
            )));
        }
        Ok(NormalMap {
            width,
            height,
            normals,
            albedo,
            valid,
        })
    }

    /// All-valid map from a normal field, normalizing each vector.
    pub fn from_normals(width: usize, height: usize, normals: Vec<[f64; 3]>) -> Result<Self> {
        let n = width * height;
        let mut valid = vec![true; n];
        let normals = normals
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let v = Vector3::from(v);
                let len = v.norm();
                if len > 0.0 && len.is_finite() {
                    (v / len).into()
                } else {
                    valid[i] = false;
                    [0.0, 0.0, 1.0]
                }
            })
            .collect();
        Self::new(width, height, normals, vec![1.0; n], valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }

    pub fn albedo(&self) -> &[f64] {
        &self.albedo
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn normal(&self, y: usize, x: usize) -> [f64; 3] {
        self.normals[y * self.width + x]
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| **v).count() as f64 / self.valid.len().max(1) as f64
    }

    /// 3-channel raster of normals with invalid pixels replaced by `(0,0,1)`.
    pub fn to_raster(&self) -> Raster {
        let n = self.width * self.height;
        let mut data = vec![0.0; 3 * n];
        for (i, (nv, ok)) in self.normals.iter().zip(&self.valid).enumerate() {
            let v = if *ok { *nv } else { [0.0, 0.0, 1.0] };
            for c in 0..3 {
                data[c * n + i] = v[c];
            }
        }
        Raster::from_vec(self.width, self.height, 3, data).expect("sized above")
    }

    /// Albedo raster with invalid pixels set to 0.
    pub fn albedo_raster(&self) -> Raster {
        let data = self
            .albedo
            .iter()
            .zip(&self.valid)
            .map(|(a, ok)| if *ok { *a } else { 0.0 })
            .collect();
        Raster::from_vec(self.width, self.height, 1, data).expect("sized above")
    }
}

/// Least-squares pseudo-inverse `(LᵀL)⁻¹Lᵀ` restricted to the lights in `subset`,
/// returned column by column. `None` when the subset does not span ℝ³.
fn pseudo_inverse(rig: &LightingRig, subset: &[usize]) -> Option<Vec<Vector3<f64>>> {
    let gram = subset.iter().fold(Matrix3::zeros(), |acc, &j| {
        let d = rig.direction(j);
        acc + d * d.transpose()
    });
    let det = gram.determinant();
    // Relative conditioning guard on the subset Gram matrix.
    if !(det.abs() > 1e-12 * gram.norm().powi(3)) {
        return None;
    }
    let inv = gram.try_inverse()?;
    Some(subset.iter().map(|&j| inv * rig.direction(j)).collect())
}

/// Recovers per-pixel normals and albedo from a calibrated light stack.
///
/// Each pixel solves `g = (LᵀL)⁻¹LᵀI` over the lights whose intensity exceeds
/// `shadow_threshold`; albedo is `‖g‖` and the normal `g/‖g‖`. Pixels with
/// fewer than three usable lights, a rank-deficient usable subset, or `g = 0`
/// are marked invalid.
pub fn solve_photometric_stereo(stack: &LightStack, shadow_threshold: f64) -> Result<NormalMap> {
    if !(0.0..1.0).contains(&shadow_threshold) {
        return Err(Error::Argument(format!(
            "shadow threshold {shadow_threshold} outside [0, 1)"
        )));
    }
    let rig = stack.rig();
    let k = rig.len();
    let all: Vec<usize> = (0..k).collect();
    let full = pseudo_inverse(rig, &all).ok_or_else(|| Error::DegenerateRig("LᵀL is not invertible".into()))?;

    let (w, h) = (stack.width(), stack.height());
    let images = stack.images();

    let rows: Vec<Vec<([f64; 3], f64, bool)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut intens = vec![0.0; k];
            let mut usable = Vec::with_capacity(k);
            (0..w)
                .map(|x| {
                    usable.clear();
                    for (j, im) in images.iter().enumerate() {
                        let v = im.get(0, y, x);
                        intens[j] = v;
                        if v > shadow_threshold {
                            usable.push(j);
                        }
                    }
                    if usable.len() < 3 {
                        return ([0.0, 0.0, 1.0], 0.0, false);
                    }
                    let g = if usable.len() == k {
                        full.iter()
                            .zip(&intens)
                            .fold(Vector3::zeros(), |acc, (col, i)| acc + col * *i)
                    } else {
                        match pseudo_inverse(rig, &usable) {
                            Some(cols) => cols
                                .iter()
                                .zip(&usable)
                                .fold(Vector3::zeros(), |acc, (col, &j)| acc + col * intens[j]),
                            None => return ([0.0, 0.0, 1.0], 0.0, false),
                        }
                    };
                    let albedo = g.norm();
                    if albedo > 0.0 && albedo.is_finite() {
                        ((g / albedo).into(), albedo, true)
                    } else {
                        ([0.0, 0.0, 1.0], 0.0, false)
                    }
                })
                .collect()
        })
        .collect();

    let mut normals = Vec::with_capacity(w * h);
    let mut albedo = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for row in rows {
        for (n, a, v) in row {
            normals.push(n);
            albedo.push(a);
            valid.push(v);
        }
    }
    NormalMap::new(w, h, normals, albedo, valid)
}

/// Lambertian forward model: `I_j = albedo · max(L_j · n, 0)` for each light.
pub fn render_lambertian(nmap: &NormalMap, rig: &LightingRig) -> LightStack {
    let (w, h) = (nmap.width(), nmap.height());
    let images = rig
        .directions()
        .iter()
        .map(|l| {
            let data = nmap
                .normals()
                .iter()
                .zip(nmap.albedo())
                .map(|(n, a)| a * (l.x * n[0] + l.y * n[1] + l.z * n[2]).max(0.0))
                .collect();
            Raster::from_vec(w, h, 1, data).expect("sized from normal map")
        })
        .collect();
    LightStack::new(images, rig.clone()).expect("one image per light")
}

/// Angle in radians between two unit vectors, stable near zero.
pub fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let a = Vector3::from(a);
    let b = Vector3::from(b);
    a.cross(&b).norm().atan2(a.dot(&b))
}
