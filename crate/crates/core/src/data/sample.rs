use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{read_gray, read_image, read_mask, read_normal_map, write_mask, write_normal_map, write_png16};
use crate::error::{Error, Result};
use crate::features::CameraProjection;
use crate::geometry::{LightStack, LightingRig, NormalMap, PointCloud};
use crate::raster::{Mask, Raster};

pub const RGB_FILE: &str = "rgb.png";
pub const LIGHTS_DIR: &str = "lights";
pub const RIG_FILE: &str = "rig.txt";
pub const NORMALS_FILE: &str = "normals.png";
pub const NORMALS_VALID_FILE: &str = "normals_valid.png";
pub const CLOUD_FILE: &str = "cloud.ply";
pub const CAMERA_FILE: &str = "camera.json";
pub const MASK_FILE: &str = "mask.png";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

/// Photometric input: a raw light stack or an already solved normal map.
#[derive(Debug, Clone)]
pub enum PsSource {
    Lights(LightStack),
    Normals(NormalMap),
}

/// One inspected object across all modalities.
#[derive(Debug, Clone)]
pub struct MultiModalSample {
    pub id: String,
    pub label: Label,
    pub defect_kind: Option<String>,
    /// Three channels in `[0, 1]`.
    pub rgb: Raster,
    pub ps: PsSource,
    pub cloud: PointCloud,
    pub camera: CameraProjection,
    pub mask: Option<Mask>,
}

/// Where a sample's modality files live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub rgb: PathBuf,
    /// Light images in file-name order, with the rig file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lights: Option<(Vec<PathBuf>, PathBuf)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals_valid: Option<PathBuf>,
    pub cloud: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

pub(crate) fn is_image(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "tif" | "tiff")
    )
}

impl SampleFiles {
    /// Resolves the files of a sample directory, or explains what is missing.
    pub fn resolve(dir: &Path) -> std::result::Result<Self, String> {
        let rgb = dir.join(RGB_FILE);
        if !rgb.is_file() {
            return Err(format!("missing {RGB_FILE}"));
        }
        let lights_dir = dir.join(LIGHTS_DIR);
        let rig = dir.join(RIG_FILE);
        let normals = dir.join(NORMALS_FILE);
        let lights = if lights_dir.is_dir() {
            if !rig.is_file() {
                return Err(format!("{LIGHTS_DIR}/ present but {RIG_FILE} is missing"));
            }
            let mut imgs: Vec<PathBuf> = fs::read_dir(&lights_dir)
                .map_err(|e| format!("cannot list {LIGHTS_DIR}/: {e}"))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image(p))
                .collect();
            imgs.sort();
            if imgs.is_empty() {
                return Err(format!("{LIGHTS_DIR}/ holds no images"));
            }
            Some((imgs, rig))
        } else {
            None
        };
        let normals = normals.is_file().then_some(normals);
        if lights.is_none() && normals.is_none() {
            return Err(format!("neither {LIGHTS_DIR}/ with {RIG_FILE} nor {NORMALS_FILE}"));
        }
        let cloud = dir.join(CLOUD_FILE);
        if !cloud.is_file() {
            return Err(format!("missing {CLOUD_FILE}"));
        }
        let opt = |name: &str| {
            let p = dir.join(name);
            p.is_file().then_some(p)
        };
        Ok(SampleFiles {
            rgb,
            lights,
            normals_valid: normals.as_ref().and_then(|_| opt(NORMALS_VALID_FILE)),
            normals,
            cloud,
            camera: opt(CAMERA_FILE),
            mask: opt(MASK_FILE),
        })
    }
}

/// Loads a sample. Light stacks take precedence over a stored normal map.
/// Without `camera.json` the cloud is taken to be in pixel units.
pub fn read_sample(
    id: &str,
    label: Label,
    defect_kind: Option<String>,
    files: &SampleFiles,
) -> Result<MultiModalSample> {
    let rgb = read_image(&files.rgb)?;
    let rgb = match rgb.channels() {
        3 => rgb,
        1 => Raster::from_fn(rgb.width(), rgb.height(), 3, |_, y, x| rgb.get(0, y, x)),
        c => {
            return Err(Error::Format(format!(
                "{}: unsupported {c}-channel image",
                files.rgb.display()
            )))
        }
    };
    let ps = match (&files.lights, &files.normals) {
        (Some((imgs, rig)), _) => {
            let rig = LightingRig::read(rig)?;
            let images = imgs.iter().map(|p| read_gray(p)).collect::<Result<Vec<_>>>()?;
            PsSource::Lights(LightStack::new(images, rig)?)
        }
        (None, Some(n)) => PsSource::Normals(read_normal_map(n, files.normals_valid.as_deref())?),
        (None, None) => return Err(Error::Validation(format!("sample {id} has no photometric input"))),
    };
    let cloud = PointCloud::read_ply(&files.cloud)?;
    let camera = match &files.camera {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let cam: CameraProjection = serde_json::from_str(&text)?;
            cam.validate()?;
            cam
        }
        None => CameraProjection::new(1.0, rgb.width(), rgb.height())?,
    };
    if (camera.width, camera.height) != (rgb.width(), rgb.height()) {
        return Err(Error::Shape(format!(
            "sample {id}: camera is {}x{} but the image is {}x{}",
            camera.width,
            camera.height,
            rgb.width(),
            rgb.height()
        )));
    }
    let mask = files.mask.as_deref().map(read_mask).transpose()?;
    Ok(MultiModalSample {
        id: id.to_string(),
        label,
        defect_kind,
        rgb,
        ps,
        cloud,
        camera,
        mask,
    })
}

/// Writes a sample directory in the layout [`SampleFiles::resolve`] reads.
/// The mask is written only for anomalous samples.
pub fn write_sample(dir: &Path, sample: &MultiModalSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_png16(&dir.join(RGB_FILE), &sample.rgb)?;
    match &sample.ps {
        PsSource::Lights(stack) => {
            let ld = dir.join(LIGHTS_DIR);
            fs::create_dir_all(&ld).map_err(|e| Error::io(&ld, e))?;
            for (i, img) in stack.images().iter().enumerate() {
                write_png16(&ld.join(format!("{i:03}.png")), img)?;
            }
            let rp = dir.join(RIG_FILE);
            fs::write(&rp, stack.rig().to_text()).map_err(|e| Error::io(&rp, e))?;
        }
        PsSource::Normals(n) => write_normal_map(&dir.join(NORMALS_FILE), &dir.join(NORMALS_VALID_FILE), n)?,
    }
    sample.cloud.write_ply(&dir.join(CLOUD_FILE))?;
    let cp = dir.join(CAMERA_FILE);
    let text = serde_json::to_string_pretty(&sample.camera)?;
    fs::write(&cp, text + "\n").map_err(|e| Error::io(&cp, e))?;
    if sample.label == Label::Anomalous {
        if let Some(m) = &sample.mask {
            write_mask(&dir.join(MASK_FILE), m)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, Defect, DefectKind, SyntheticSceneSpec};

    #[test]
    fn written_sample_reads_back() {
        let mut spec = SyntheticSceneSpec::flat(32, 24);
        spec.defects.push(Defect {
            kind: DefectKind::Dent,
            center: [16.0, 12.0],
            size: 8.0,
            amplitude: 0.05,
            angle_deg: 0.0,
            width: 3.0,
        });
        let s = generate_synthetic(&spec, 1).unwrap().sample;
        let dir = tempfile::tempdir().unwrap();
        write_sample(dir.path(), &s).unwrap();
        let files = SampleFiles::resolve(dir.path()).unwrap();
        assert_eq!(files.lights.as_ref().unwrap().0.len(), 4);
        let back = read_sample("x", Label::Anomalous, Some("dent".into()), &files).unwrap();
        assert_eq!(back.cloud, s.cloud);
        assert_eq!(back.camera, s.camera);
        assert_eq!(back.mask, s.mask);
        for (a, b) in back.rgb.data().iter().zip(s.rgb.data()) {
            assert!((a - b).abs() < 1e-4);
        }
        match back.ps {
            PsSource::Lights(l) => assert_eq!(l.rig(), &spec.rig),
            PsSource::Normals(_) => panic!("expected lights"),
        }
    }

    #[test]
    fn lights_without_rig_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(RGB_FILE), b"").unwrap();
        fs::write(dir.path().join(CLOUD_FILE), b"").unwrap();
        fs::create_dir(dir.path().join(LIGHTS_DIR)).unwrap();
        let err = SampleFiles::resolve(dir.path()).unwrap_err();
        assert!(err.contains(RIG_FILE));
    }
}
