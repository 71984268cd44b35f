//! Memory banks, nearest-neighbor scoring, one-class decision fusion and AUROC.

mod bank;
mod metrics;
mod ocsvm;
mod scoring;
mod segmentation;

pub use bank::{coreset_size, greedy_coreset, MemoryBank, Neighbors, BANK_MAGIC};
pub use metrics::auroc;
pub use ocsvm::{primal_objective, Decision, LinearOcsvm, OcsvmConfig, OneClassModel, KAPPA, MIN_TRAINING_ROWS};
pub use scoring::{image_score, score_patches, score_patches_where, PatchScores, MAX_GAP};
pub use segmentation::{fuse_segmentation, gaussian_blur, patch_decision_map, upsample_bilinear, DEFAULT_SIGMA};
