use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sample::{Label, MultiModalSample, PsSource};
use crate::error::{Error, Result};
use crate::features::CameraProjection;
use crate::geometry::{render_lambertian, LightingRig, NormalMap, PointCloud};
use crate::raster::{Mask, Raster};

/// Smallest and largest nominal defect area, as a fraction of the image.
pub const DEFECT_AREA_RANGE: (f64, f64) = (0.001, 0.10);

const STREAM_TEXTURE: u64 = 0;
const STREAM_RGB: u64 = 1;
const STREAM_LIGHTS: u64 = 2;
const STREAM_CLOUD: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    /// `z = slope_x·X + slope_y·Y`.
    Plane {
        #[serde(default)]
        slope_x: f64,
        #[serde(default)]
        slope_y: f64,
    },
    /// `z = amplitude·sin(2πX/period)·sin(2πY/period)`, lengths in mm.
    Sinusoid { amplitude: f64, period: f64 },
    /// Spherical cap of the given radius (mm), apex at the image centre.
    SphereCap { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectKind {
    Scratch,
    Dent,
    Bump,
    ColorStain,
}

impl DefectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DefectKind::Scratch => "scratch",
            DefectKind::Dent => "dent",
            DefectKind::Bump => "bump",
            DefectKind::ColorStain => "color-stain",
        }
    }

    pub fn is_geometric(self) -> bool {
        !matches!(self, DefectKind::ColorStain)
    }
}

fn default_scratch_width() -> f64 {
    3.0
}

/// One injected defect. Positions and sizes are in pixels; `amplitude` is a
/// depth in mm for geometric kinds and a fractional albedo loss for stains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub kind: DefectKind,
    pub center: [f64; 2],
    /// Diameter for round defects, length for scratches.
    pub size: f64,
    pub amplitude: f64,
    /// Scratch direction, degrees from the +x axis.
    #[serde(default)]
    pub angle_deg: f64,
    /// Scratch width in pixels.
    #[serde(default = "default_scratch_width")]
    pub width: f64,
}

impl Defect {
    pub fn nominal_area(&self) -> f64 {
        match self.kind {
            DefectKind::Scratch => self.size * self.width,
            _ => PI * self.size * self.size / 4.0,
        }
    }

    fn frame(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (px - self.center[0], py - self.center[1]);
        (dx * c + dy * s, -dx * s + dy * c)
    }

    /// Shape profile in `[0, 1]` at pixel-space point `(px, py)`.
    fn profile(&self, px: f64, py: f64) -> f64 {
        match self.kind {
            DefectKind::Scratch => {
                let (t, s) = self.frame(px, py);
                let half = self.width / 2.0;
                if s.abs() >= half || t.abs() >= self.size / 2.0 {
                    return 0.0;
                }
                let across = (PI * s / self.width).cos().powi(2);
                let end = ((self.size / 2.0 - t.abs()) / half).min(1.0);
                across * end * end * (3.0 - 2.0 * end)
            }
            _ => {
                let r = (px - self.center[0]).hypot(py - self.center[1]);
                if r >= self.size / 2.0 {
                    0.0
                } else {
                    (PI * r / self.size).cos().powi(2)
                }
            }
        }
    }

    /// Ground-truth footprint membership at pixel-space point `(px, py)`.
    fn covers(&self, px: f64, py: f64) -> bool {
        match self.kind {
            DefectKind::Scratch => {
                let (t, s) = self.frame(px, py);
                t.abs() < self.size / 2.0 && s.abs() < self.width / 2.0
            }
            _ => (px - self.center[0]).hypot(py - self.center[1]) < self.size / 2.0,
        }
    }

    fn extent(&self) -> (f64, f64) {
        match self.kind {
            DefectKind::Scratch => {
                let (s, c) = self.angle_deg.to_radians().sin_cos();
                let (l, w) = (self.size / 2.0, self.width / 2.0);
                (l * c.abs() + w * s.abs(), l * s.abs() + w * c.abs())
            }
            _ => (self.size / 2.0, self.size / 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlbedoTexture {
    pub base: f64,
    pub variation: f64,
    /// Value-noise lattice spacing in pixels.
    pub cell: f64,
    /// Fixed texture seed; when absent the sample seed is used.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for AlbedoTexture {
    fn default() -> Self {
        AlbedoTexture {
            base: 0.6,
            variation: 0.15,
            cell: 16.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    /// Standard deviation of additive intensity noise.
    #[serde(default)]
    pub intensity: f64,
    /// Standard deviation of point position noise in mm.
    #[serde(default = "default_position_noise")]
    pub position: f64,
}

fn default_position_noise() -> f64 {
    0.002
}

impl Default for NoiseLevels {
    fn default() -> Self {
        NoiseLevels {
            intensity: 0.0,
            position: default_position_noise(),
        }
    }
}

fn default_pitch() -> f64 {
    0.1
}

fn default_tint() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

fn default_rig() -> LightingRig {
    LightingRig::ring(4, 30.0).expect("standard ring is valid")
}

/// Description of one synthetic scene, usually read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub height: usize,
    pub width: usize,
    /// Pixel size in mm.
    #[serde(default = "default_pitch")]
    pub pixel_pitch: f64,
    pub surface: Surface,
    #[serde(default)]
    pub albedo: AlbedoTexture,
    /// Per-channel color of the RGB render.
    #[serde(default = "default_tint")]
    pub tint: [f64; 3],
    #[serde(default = "default_rig")]
    pub rig: LightingRig,
    #[serde(default)]
    pub defects: Vec<Defect>,
    /// Points per mm².
    pub cloud_density: f64,
    #[serde(default)]
    pub noise: NoiseLevels,
}

impl SyntheticSceneSpec {
    /// A flat, defect-free scene with default texture and lighting.
    pub fn flat(width: usize, height: usize) -> Self {
        SyntheticSceneSpec {
            height,
            width,
            pixel_pitch: default_pitch(),
            surface: Surface::Plane {
                slope_x: 0.0,
                slope_y: 0.0,
            },
            albedo: AlbedoTexture::default(),
            tint: default_tint(),
            rig: default_rig(),
            defects: Vec::new(),
            cloud_density: 20.0,
            noise: NoiseLevels::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.width == 0 || self.height == 0 {
            return arg("scene must have positive size".into());
        }
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch.is_finite()) {
            return arg(format!("pixel pitch must be positive, got {}", self.pixel_pitch));
        }
        if !(self.cloud_density > 0.0 && self.cloud_density.is_finite()) {
            return arg(format!("cloud density must be positive, got {}", self.cloud_density));
        }
        let a = &self.albedo;
        if !(a.base - a.variation >= 0.0 && a.base + a.variation <= 1.0 && a.variation >= 0.0 && a.cell > 0.0) {
            return arg(format!(
                "albedo {} ± {} must stay within [0, 1] with a positive cell size",
                a.base, a.variation
            ));
        }
        if self.tint.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return arg("tint channels must lie in [0, 1]".into());
        }
        if self.noise.intensity < 0.0 || self.noise.position < 0.0 {
            return arg("noise levels must be non-negative".into());
        }
        if let Surface::SphereCap { radius } = self.surface {
            let half_diag = 0.5 * self.pixel_pitch * (self.width as f64).hypot(self.height as f64);
            if !(radius > half_diag) {
                return arg(format!(
                    "sphere radius {radius} mm does not cover the {half_diag} mm half-diagonal"
                ));
            }
        }
        if let Surface::Sinusoid { period, .. } = self.surface {
            if !(period > 0.0) {
                return arg("sinusoid period must be positive".into());
            }
        }
        let image_area = (self.width * self.height) as f64;
        for (i, d) in self.defects.iter().enumerate() {
            if !(d.size > 0.0 && d.width > 0.0 && d.amplitude >= 0.0 && d.amplitude.is_finite()) {
                return arg(format!(
                    "defect {i} needs positive size and width and a non-negative amplitude"
                ));
            }
            if d.kind == DefectKind::ColorStain && d.amplitude > 1.0 {
                return arg(format!(
                    "stain {i} amplitude is an albedo fraction and must not exceed 1"
                ));
            }
            let (ex, ey) = d.extent();
            let [cx, cy] = d.center;
            if cx - ex < 0.0 || cy - ey < 0.0 || cx + ex > self.width as f64 || cy + ey > self.height as f64 {
                return arg(format!("defect {i} at ({cx}, {cy}) extends outside the image"));
            }
            let frac = d.nominal_area() / image_area;
            if frac < DEFECT_AREA_RANGE.0 || frac > DEFECT_AREA_RANGE.1 {
                return arg(format!(
                    "defect {i} covers {:.3}% of the image, outside [{}%, {}%]",
                    frac * 100.0,
                    DEFECT_AREA_RANGE.0 * 100.0,
                    DEFECT_AREA_RANGE.1 * 100.0
                ));
            }
        }
        Ok(())
    }

    /// Surface height in mm at world position `(x, y)` in mm.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let base = match self.surface {
            Surface::Plane { slope_x, slope_y } => slope_x * x + slope_y * y,
            Surface::Sinusoid { amplitude, period } => {
                amplitude * (2.0 * PI * x / period).sin() * (2.0 * PI * y / period).sin()
            }
            Surface::SphereCap { radius } => {
                let cx = 0.5 * self.width as f64 * self.pixel_pitch;
                let cy = 0.5 * self.height as f64 * self.pixel_pitch;
                let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                (radius * radius - r2).max(0.0).sqrt() - radius
            }
        };
        let (px, py) = (x / self.pixel_pitch, y / self.pixel_pitch);
        self.defects
            .iter()
            .filter(|d| d.kind.is_geometric())
            .fold(base, |h, d| {
                let sign = if d.kind == DefectKind::Bump { 1.0 } else { -1.0 };
                h + sign * d.amplitude * d.profile(px, py)
            })
    }

    /// Unit surface normal from central differences of the height field.
    pub fn normal_at(&self, x: f64, y: f64) -> [f64; 3] {
        let e = 1e-4 * self.pixel_pitch;
        let gx = (self.height_at(x + e, y) - self.height_at(x - e, y)) / (2.0 * e);
        let gy = (self.height_at(x, y + e) - self.height_at(x, y - e)) / (2.0 * e);
        let n = (gx * gx + gy * gy + 1.0).sqrt();
        [-gx / n, -gy / n, 1.0 / n]
    }

    /// Ground-truth mask: union of footprints of defects with non-zero amplitude.
    pub fn defect_mask(&self) -> Mask {
        let mut m = Mask::empty(self.width, self.height);
        for d in self.defects.iter().filter(|d| d.amplitude > 0.0) {
            for y in 0..self.height {
                for x in 0..self.width {
                    if d.covers(x as f64 + 0.5, y as f64 + 0.5) {
                        m.set(y, x, true);
                    }
                }
            }
        }
        m
    }

    pub fn camera(&self) -> CameraProjection {
        CameraProjection {
            pixel_pitch: self.pixel_pitch,
            origin_x: 0.0,
            origin_y: 0.0,
            width: self.width,
            height: self.height,
        }
    }
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Bilinear value noise in `[0, 1]` on a lattice of `cell`-pixel spacing.
fn value_noise(w: usize, h: usize, cell: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let fy = (y as f64 + 0.5) / cell;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = (x as f64 + 0.5) / cell;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            // smoothstep weights hide the lattice
            let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
            let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = at(y0, x0) * (1.0 - sx) + at(y0, x0 + 1) * sx;
            let bot = at(y0 + 1, x0) * (1.0 - sx) + at(y0 + 1, x0 + 1) * sx;
            out.push(top * (1.0 - sy) + bot * sy);
        }
    }
    out
}

/// A generated sample together with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub sample: MultiModalSample,
    pub true_normals: NormalMap,
    /// Surface height at pixel centres, mm.
    pub true_depth: Raster,
    /// Grayscale albedo including stains.
    pub albedo: Raster,
}

/// Renders every modality of a scene. Each modality draws from its own
/// random stream, so changing albedo-only defects leaves the geometry
/// modalities bit-identical and vice versa.
pub fn generate_synthetic(spec: &SyntheticSceneSpec, seed: u64) -> Result<SyntheticSample> {
    spec.validate()?;
    let (w, h, pitch) = (spec.width, spec.height, spec.pixel_pitch);
    let n = w * h;

    let mut depth = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            let (wx, wy) = ((x as f64 + 0.5) * pitch, (y as f64 + 0.5) * pitch);
            depth.push(spec.height_at(wx, wy));
            normals.push(spec.normal_at(wx, wy));
        }
    }

    let mut tex_rng = stream(spec.albedo.seed.unwrap_or(seed), STREAM_TEXTURE);
    let noise = value_noise(w, h, spec.albedo.cell, &mut tex_rng);
    let mut albedo: Vec<f64> = noise
        .iter()
        .map(|v| spec.albedo.base + spec.albedo.variation * (2.0 * v - 1.0))
        .collect();
    for d in spec.defects.iter().filter(|d| d.kind == DefectKind::ColorStain) {
        for y in 0..h {
            for x in 0..w {
                let p = d.profile(x as f64 + 0.5, y as f64 + 0.5);
                albedo[y * w + x] *= 1.0 - d.amplitude * p;
            }
        }
    }

    let true_normals = NormalMap::new(w, h, normals, albedo.clone(), vec![true; n])?;

    let sigma_i = spec.noise.intensity;
    let intensity_noise = |rng: &mut ChaCha8Rng| -> f64 {
        if sigma_i > 0.0 {
            Normal::new(0.0, sigma_i).expect("finite sigma").sample(rng)
        } else {
            0.0
        }
    };

    let mut rgb_rng = stream(seed, STREAM_RGB);
    let mut rgb = Raster::zeros(w, h, 3);
    for c in 0..3 {
        for i in 0..n {
            let shade = albedo[i] * true_normals.normals()[i][2].max(0.0);
            let v = spec.tint[c] * shade + intensity_noise(&mut rgb_rng);
            rgb.channel_mut(c)[i] = v.clamp(0.0, 1.0);
        }
    }

    let clean = render_lambertian(&true_normals, &spec.rig);
    let mut light_rng = stream(seed, STREAM_LIGHTS);
    let images: Vec<Raster> = clean
        .images()
        .iter()
        .map(|img| {
            let mut img = img.clone();
            if sigma_i > 0.0 {
                for v in img.data_mut() {
                    *v = (*v + intensity_noise(&mut light_rng)).clamp(0.0, 1.0);
                }
            }
            img
        })
        .collect();
    let lights = crate::geometry::LightStack::new(images, spec.rig.clone())?;

    let mut cloud_rng = stream(seed, STREAM_CLOUD);
    let (span_x, span_y) = (w as f64 * pitch, h as f64 * pitch);
    let count = ((spec.cloud_density * span_x * span_y).round() as usize).max(1);
    let pos = (spec.noise.position > 0.0).then(|| Normal::new(0.0, spec.noise.position).expect("finite sigma"));
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let x = cloud_rng.random_range(0.0..span_x);
        let y = cloud_rng.random_range(0.0..span_y);
        let z = spec.height_at(x, y);
        let p = match &pos {
            Some(nd) => [
                x + nd.sample(&mut cloud_rng),
                y + nd.sample(&mut cloud_rng),
                z + nd.sample(&mut cloud_rng),
            ],
            None => [x, y, z],
        };
        points.push(p);
    }
    let cloud = PointCloud::new(points)?;

    let mask = spec.defect_mask();
    let anomalous = mask.count() > 0;
    let kind = spec
        .defects
        .iter()
        .find(|d| d.amplitude > 0.0)
        .map(|d| d.kind.as_str().to_string());
    let sample = MultiModalSample {
        id: format!("{seed:06}"),
        label: if anomalous { Label::Anomalous } else { Label::Normal },
        defect_kind: if anomalous { kind } else { None },
        rgb,
        ps: PsSource::Lights(lights),
        cloud,
        camera: spec.camera(),
        mask: Some(mask),
    };
    Ok(SyntheticSample {
        sample,
        true_normals,
        true_depth: Raster::from_vec(w, h, 1, depth)?,
        albedo: Raster::from_vec(w, h, 1, albedo)?,
    })
}
