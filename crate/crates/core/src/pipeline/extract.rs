use std::path::{Path, PathBuf};

use crate::data::{downsample_cloud, Label, MultiModalSample, PsSource};
use crate::error::{Error, Result};
use crate::features::{
    extract_features, extract_point_features, interpolate_point_features, Backend, CameraProjection, FeatureMap,
    Modality,
};
use crate::geometry::{integrate_normals_to_depth, solve_photometric_stereo, NormalMap, PointCloud};
use crate::raster::{Mask, Raster};

use super::config::{BackendKind, ModalitySet, PsInput, RunConfig};

/// File names of precomputed tensors for the imported backend.
pub const RGB_TENSOR_FILE: &str = "rgb.d3ft";
pub const PS_TENSOR_FILE: &str = "ps.d3ft";

/// A loaded sample and, when it came from disk, its directory.
#[derive(Debug, Clone)]
pub struct SampleInput {
    pub sample: MultiModalSample,
    pub dir: Option<PathBuf>,
}

impl From<MultiModalSample> for SampleInput {
    fn from(sample: MultiModalSample) -> Self {
        SampleInput { sample, dir: None }
    }
}

/// Settings that shape per-sample features.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    pub modalities: ModalitySet,
    pub backend: BackendKind,
    pub patch_size: usize,
    pub ps_input: PsInput,
    pub shadow_threshold: f64,
    pub point_radius: f64,
    pub interpolate: bool,
    pub downsample: usize,
    pub seed: u64,
}

impl ExtractOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        ExtractOptions {
            modalities: cfg.modalities,
            backend: cfg.backend,
            patch_size: cfg.patch_size,
            ps_input: cfg.ps_input,
            shadow_threshold: cfg.shadow_threshold,
            point_radius: cfg.point_radius,
            interpolate: cfg.interpolate,
            downsample: cfg.downsample,
            seed: cfg.seed,
        }
    }
}

/// Raw (unnormalized) feature maps of one sample plus what evaluation needs.
#[derive(Debug, Clone)]
pub struct SampleFeatures {
    pub id: String,
    pub label: Label,
    pub defect_kind: Option<String>,
    pub width: usize,
    pub height: usize,
    pub mask: Option<Mask>,
    pub rgb: Option<FeatureMap>,
    pub ps: Option<FeatureMap>,
    pub cloud: Option<FeatureMap>,
}

fn backend_for(kind: BackendKind, dir: Option<&Path>, file: &str, id: &str) -> Result<Backend> {
    match kind {
        BackendKind::Handcrafted => Ok(Backend::Handcrafted),
        BackendKind::Imported => {
            let dir = dir.ok_or_else(|| {
                Error::Argument(format!(
                    "sample {id}: the imported backend needs samples read from disk"
                ))
            })?;
            Ok(Backend::Imported(dir.join(file)))
        }
    }
}

/// The photometric modality as an image: normals, or depth with its gradients.
pub fn ps_raster(source: &PsSource, input: PsInput, shadow_threshold: f64) -> Result<Raster> {
    let solved;
    let nmap: &NormalMap = match source {
        PsSource::Lights(stack) => {
            solved = solve_photometric_stereo(stack, shadow_threshold)?;
            &solved
        }
        PsSource::Normals(n) => n,
    };
    match input {
        PsInput::Normals => Ok(nmap.to_raster()),
        PsInput::Depth => {
            let depth = integrate_normals_to_depth(nmap)?;
            let (w, h) = (depth.width(), depth.height());
            let z = |y: usize, x: usize| depth.get(0, y, x);
            Ok(Raster::from_fn(w, h, 3, |c, y, x| match c {
                0 => z(y, x),
                1 => (z(y, (x + 1).min(w - 1)) - z(y, x.saturating_sub(1))) / 2.0,
                _ => (z((y + 1).min(h - 1), x) - z(y.saturating_sub(1), x)) / 2.0,
            }))
        }
    }
}

/// Expected neighbours inside the descriptor radius below which the radius
/// is widened.
pub const MIN_NEIGHBORS: f64 = 8.0;

/// `base` (mm), widened so that a cloud of `points` spread evenly over the
/// camera footprint has at least [`MIN_NEIGHBORS`] points per neighbourhood.
pub fn descriptor_radius(points: usize, camera: &CameraProjection, base: f64) -> f64 {
    let area = camera.width as f64 * camera.height as f64 * camera.pixel_pitch * camera.pixel_pitch;
    let density = points as f64 / area;
    base.max((MIN_NEIGHBORS / (std::f64::consts::PI * density)).sqrt())
}

/// Point descriptors of a (possibly downsampled) cloud rasterized onto the
/// patch grid of the image.
pub fn cloud_features(
    cloud: &PointCloud,
    sample: &MultiModalSample,
    opts: &ExtractOptions,
    grid_h: usize,
    grid_w: usize,
    downsample_seed: u64,
) -> Result<FeatureMap> {
    let reduced;
    let cloud = if opts.downsample > 1 {
        reduced = downsample_cloud(cloud, opts.downsample, downsample_seed, &sample.id)?;
        &reduced
    } else {
        cloud
    };
    let base = opts.point_radius * opts.patch_size as f64 * sample.camera.pixel_pitch;
    let radius = descriptor_radius(cloud.len(), &sample.camera, base);
    let feats = extract_point_features(cloud, radius)?;
    interpolate_point_features(&feats, cloud, &sample.camera, grid_h, grid_w, opts.interpolate)
}

/// Features of every requested modality. `downsample_seed` drives the
/// farthest-point sampling of this sample's cloud.
pub fn extract_sample(input: &SampleInput, opts: &ExtractOptions, downsample_seed: u64) -> Result<SampleFeatures> {
    let s = &input.sample;
    let (w, h) = (s.rgb.width(), s.rgb.height());
    let ps = opts.patch_size;
    let (gh, gw) = (h / ps, w / ps);
    let dir = input.dir.as_deref();
    let rgb = if opts.modalities.rgb {
        let backend = backend_for(opts.backend, dir, RGB_TENSOR_FILE, &s.id)?;
        Some(extract_features(&s.rgb, &backend, ps, Modality::Rgb)?)
    } else {
        None
    };
    let psf = if opts.modalities.ps {
        let raster = ps_raster(&s.ps, opts.ps_input, opts.shadow_threshold)?;
        if raster.width() != w || raster.height() != h {
            return Err(Error::Shape(format!(
                "sample {}: photometric input is {}x{}, RGB is {}x{}",
                s.id,
                raster.height(),
                raster.width(),
                h,
                w
            )));
        }
        let backend = backend_for(opts.backend, dir, PS_TENSOR_FILE, &s.id)?;
        Some(extract_features(&raster, &backend, ps, Modality::Ps)?)
    } else {
        None
    };
    let cloud = if opts.modalities.cloud {
        if gh == 0 || gw == 0 {
            return Err(Error::Argument(format!(
                "image {h}x{w} is smaller than patch size {ps}"
            )));
        }
        Some(cloud_features(&s.cloud, s, opts, gh, gw, downsample_seed)?)
    } else {
        None
    };
    Ok(SampleFeatures {
        id: s.id.clone(),
        label: s.label,
        defect_kind: s.defect_kind.clone(),
        width: w,
        height: h,
        mask: s.mask.clone(),
        rgb,
        ps: psf,
        cloud,
    })
}
