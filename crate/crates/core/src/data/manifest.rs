use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sample::{read_sample, Label, MultiModalSample, SampleFiles, CLOUD_FILE};
use crate::error::{Error, Result};
use crate::geometry::{fps_downsample, PointCloud};

pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";
pub const GOOD_DIR: &str = "good";

/// Seed for the sample at `index` within a run seeded with `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub dir: PathBuf,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_kind: Option<String>,
    pub files: SampleFiles,
}

impl SampleEntry {
    pub fn load(&self) -> Result<MultiModalSample> {
        read_sample(&self.id, self.label, self.defect_kind.clone(), &self.files)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryManifest {
    pub name: String,
    pub train: Vec<SampleEntry>,
    pub test: Vec<SampleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub categories: Vec<CategoryManifest>,
    /// Samples excluded while reading, with the reason.
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn category(&self, name: &str) -> Option<&CategoryManifest> {
        self.categories.iter().find(|c| c.name == name)
    }
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && !p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with('.'))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn name_of(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn collect(
    kind_dir: &Path,
    label: Label,
    defect_kind: Option<&str>,
    out: &mut Vec<SampleEntry>,
    warnings: &mut Vec<String>,
) -> Result<()> {
    for dir in subdirs(kind_dir)? {
        match SampleFiles::resolve(&dir) {
            Ok(files) => {
                if label == Label::Anomalous && files.mask.is_none() {
                    let w = format!("{}: anomalous sample has no mask.png; excluded", dir.display());
                    log::warn!("{w}");
                    warnings.push(w);
                    continue;
                }
                out.push(SampleEntry {
                    id: name_of(&dir),
                    dir,
                    label,
                    defect_kind: defect_kind.map(str::to_string),
                    files,
                });
            }
            Err(reason) => {
                let w = format!("{}: {reason}; excluded", dir.display());
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    Ok(())
}

/// Reads a dataset tree:
///
/// ```text
/// root/<category>/train/good/<sample>/
/// root/<category>/test/good/<sample>/
/// root/<category>/test/<defect-kind>/<sample>/   (with mask.png)
/// ```
///
/// Samples missing a modality file are excluded with a warning. A `train/`
/// holding anything but `good/` is a validation error, as is a category
/// left without training samples.
pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Validation(format!("{} is not a directory", root.display())));
    }
    let mut categories = Vec::new();
    let mut warnings = Vec::new();
    for cat_dir in subdirs(root)? {
        let train_dir = cat_dir.join(TRAIN_DIR);
        let test_dir = cat_dir.join(TEST_DIR);
        if !train_dir.is_dir() && !test_dir.is_dir() {
            continue;
        }
        let name = name_of(&cat_dir);
        let mut train = Vec::new();
        if train_dir.is_dir() {
            for kind in subdirs(&train_dir)? {
                if name_of(&kind) != GOOD_DIR {
                    return Err(Error::Validation(format!(
                        "{}: training data must be defect-free, found {}/",
                        train_dir.display(),
                        name_of(&kind)
                    )));
                }
                collect(&kind, Label::Normal, None, &mut train, &mut warnings)?;
            }
        }
        let mut test = Vec::new();
        if test_dir.is_dir() {
            for kind in subdirs(&test_dir)? {
                let k = name_of(&kind);
                if k == GOOD_DIR {
                    collect(&kind, Label::Normal, None, &mut test, &mut warnings)?;
                } else {
                    collect(&kind, Label::Anomalous, Some(&k), &mut test, &mut warnings)?;
                }
            }
        }
        if train.is_empty() {
            return Err(Error::EmptyInput(format!(
                "category {name} has no usable training samples"
            )));
        }
        categories.push(CategoryManifest { name, train, test });
    }
    if categories.is_empty() {
        return Err(Error::EmptyInput(format!("no categories under {}", root.display())));
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        categories,
        warnings,
    })
}

fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).map_err(|e| Error::io(to, e))?;
    for entry in fs::read_dir(from).map_err(|e| Error::io(from, e))? {
        let p = entry.map_err(|e| Error::io(from, e))?.path();
        let dest = to.join(p.file_name().expect("directory entries have names"));
        if p.is_dir() {
            copy_tree(&p, &dest)?;
        } else {
            fs::copy(&p, &dest).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

/// Point-cloud downsampling of one sample, warning when fewer than 8 points
/// survive.
pub fn downsample_cloud(cloud: &PointCloud, factor: usize, seed: u64, id: &str) -> Result<PointCloud> {
    let out = fps_downsample(cloud, factor, seed)?;
    if factor > 1 && out.len() < 8 {
        log::warn!(
            "sample {id}: {} points left after {factor}x downsampling (from {}); severely degraded",
            out.len(),
            cloud.len()
        );
    }
    Ok(out)
}

/// Writes a copy of the dataset under `out_root` with every point cloud
/// reduced by farthest-point sampling, and returns its manifest. Factor 1
/// copies clouds byte for byte.
pub fn downsample_dataset(
    manifest: &DatasetManifest,
    factor: usize,
    seed: u64,
    out_root: &Path,
) -> Result<DatasetManifest> {
    if factor == 0 {
        return Err(Error::Argument("downsampling factor must be at least 1".into()));
    }
    let mut index = 0;
    for cat in &manifest.categories {
        for entry in cat.train.iter().chain(&cat.test) {
            let rel = entry.dir.strip_prefix(&manifest.root).map_err(|_| {
                Error::Validation(format!(
                    "{} lies outside {}",
                    entry.dir.display(),
                    manifest.root.display()
                ))
            })?;
            let dest = out_root.join(rel);
            copy_tree(&entry.dir, &dest)?;
            if factor > 1 {
                let cloud = PointCloud::read_ply(&entry.files.cloud)?;
                let reduced = downsample_cloud(&cloud, factor, sample_seed(seed, index), &entry.id)?;
                reduced.write_ply(&dest.join(CLOUD_FILE))?;
            }
            index += 1;
        }
    }
    read_manifest(out_root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample::{write_sample, LIGHTS_DIR, MASK_FILE, RIG_FILE};
    use crate::data::synth::{generate_synthetic, Defect, DefectKind, SyntheticSceneSpec};

    fn write(root: &Path, rel: &str, seed: u64, defect: bool) {
        let mut spec = SyntheticSceneSpec::flat(16, 16);
        spec.cloud_density = 40.0;
        if defect {
            spec.defects.push(Defect {
                kind: DefectKind::Bump,
                center: [8.0, 8.0],
                size: 4.0,
                amplitude: 0.05,
                angle_deg: 0.0,
                width: 3.0,
            });
        }
        let s = generate_synthetic(&spec, seed).unwrap().sample;
        write_sample(&root.join(rel), &s).unwrap();
    }

    fn toy_tree(root: &Path) {
        for cat in ["alpha", "beta"] {
            for i in 0..3 {
                write(root, &format!("{cat}/train/good/{i:03}"), i, false);
            }
            write(root, &format!("{cat}/test/good/000"), 10, false);
            write(root, &format!("{cat}/test/bump/000"), 11, true);
            write(root, &format!("{cat}/test/bump/001"), 12, true);
        }
    }

    #[test]
    fn toy_tree_counts() {
        let dir = tempfile::tempdir().unwrap();
        toy_tree(dir.path());
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!(m.categories.len(), 2);
        for c in &m.categories {
            assert_eq!(c.train.len(), 3);
            assert_eq!(c.test.len(), 3);
            assert_eq!(c.test.iter().filter(|s| s.label == Label::Anomalous).count(), 2);
            assert!(c.train.iter().all(|s| s.label == Label::Normal));
        }
        assert!(m.warnings.is_empty());
        let json = m.to_json().unwrap();
        let back: DatasetManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn defect_dir_in_train_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "alpha/train/good/000", 0, false);
        write(dir.path(), "alpha/train/bump/000", 1, true);
        assert!(matches!(read_manifest(dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn lights_without_rig_are_excluded() {
        let dir = tempfile::tempdir().unwrap();
        toy_tree(dir.path());
        fs::remove_file(dir.path().join("alpha/train/good/001").join(RIG_FILE)).unwrap();
        fs::remove_file(dir.path().join("beta/test/bump/001").join(MASK_FILE)).unwrap();
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!(m.category("alpha").unwrap().train.len(), 2);
        assert_eq!(m.category("beta").unwrap().test.len(), 2);
        assert_eq!(m.warnings.len(), 2);
        assert!(m.warnings[0].contains(LIGHTS_DIR));
    }

    #[test]
    fn empty_category_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("alpha/train/good")).unwrap();
        assert!(matches!(read_manifest(dir.path()), Err(Error::EmptyInput(_))));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(read_manifest(empty.path()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn downsampled_copies() {
        let dir = tempfile::tempdir().unwrap();
        toy_tree(dir.path());
        let m = read_manifest(dir.path()).unwrap();
        let out1 = tempfile::tempdir().unwrap();
        let m1 = downsample_dataset(&m, 1, 7, out1.path()).unwrap();
        for (a, b) in m.categories[0].train.iter().zip(&m1.categories[0].train) {
            assert_eq!(fs::read(&a.files.cloud).unwrap(), fs::read(&b.files.cloud).unwrap());
        }
        let out4 = tempfile::tempdir().unwrap();
        let m4 = downsample_dataset(&m, 4, 7, out4.path()).unwrap();
        for (a, b) in m.categories[1].test.iter().zip(&m4.categories[1].test) {
            let n = PointCloud::read_ply(&a.files.cloud).unwrap().len();
            let k = PointCloud::read_ply(&b.files.cloud).unwrap().len();
            assert_eq!(k, n.div_ceil(4));
        }
    }

    #[test]
    fn fps_counts_follow_ceiling() {
        let pts: Vec<[f64; 3]> = (0..1000).map(|i| [i as f64, (i * 7 % 13) as f64, 0.0]).collect();
        let c = PointCloud::new(pts).unwrap();
        assert_eq!(downsample_cloud(&c, 4, 1, "a").unwrap().len(), 250);
        let small = c.select(&(0..100).collect::<Vec<_>>()).unwrap();
        assert_eq!(downsample_cloud(&small, 40, 1, "b").unwrap().len(), 3);
    }
}
