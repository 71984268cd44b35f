//! End-to-end runs: feature extraction, fitting, evaluation and ablation.

mod commands;
mod config;
mod extract;
mod model;

pub use commands::{
    ablation_arms, cmd_ablate, cmd_benchmark, cmd_eval, cmd_fit, cmd_ps_solve, cmd_synth, evaluate_categories,
    extract_all, fit_categories, load_dataset, normalize_heatmap, run_ablation, run_arms, valid_mask_path,
    with_threads, write_ablation, write_eval, AblationArm, AblationRow, CategoryData, SynthSummary, ABLATION_FILE,
    DOWNSAMPLE_FACTORS, HEATMAPS_DIR, METRICS_FILE, SCORES_FILE,
};
pub use config::{BackendKind, ModalitySet, PsInput, RunConfig, Stream};
pub use extract::{
    cloud_features, descriptor_radius, extract_sample, ps_raster, ExtractOptions, SampleFeatures, SampleInput,
    MIN_NEIGHBORS, PS_TENSOR_FILE, RGB_TENSOR_FILE,
};
pub use model::{
    evaluate_category, CategoryEval, CategoryModel, ModelBundle, SampleOutcome, Scored, BANKS_DIR, MODEL_FILE,
};
