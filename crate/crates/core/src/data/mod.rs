//! Dataset trees on disk, image I/O and the synthetic scene generator.

mod benchmark;
mod io;
mod manifest;
mod sample;
mod synth;

pub use benchmark::{generate_benchmark, write_benchmark, BenchmarkCategory, BenchmarkConfig, DefectMix};
pub use io::{read_gray, read_image, read_mask, read_normal_map, write_mask, write_normal_map, write_png16};
pub use manifest::{
    downsample_cloud, downsample_dataset, read_manifest, sample_seed, CategoryManifest, DatasetManifest, SampleEntry,
    GOOD_DIR, TEST_DIR, TRAIN_DIR,
};
pub(crate) use sample::is_image;
pub use sample::{read_sample, write_sample, Label, MultiModalSample, PsSource, SampleFiles};
pub use synth::{
    generate_synthetic, AlbedoTexture, Defect, DefectKind, NoiseLevels, Surface, SyntheticSample, SyntheticSceneSpec,
    DEFECT_AREA_RANGE,
};
