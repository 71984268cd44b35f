//! Patch features per modality and the 2D/3D fusion machinery.

mod contrastive;
mod handcrafted;
mod imported;
mod interpolate;
mod map;
mod point;
mod swap;

pub use contrastive::{
    alignment_ratios, contrastive_loss, objective_and_gradient, train_fusion, ContrastiveBatch, FusionModel,
    ProjectionHead, TrainConfig,
};
pub use handcrafted::{
    extract_features, handcrafted_features, orientation_bin, Backend, DESCRIPTOR_LEN, ORIENTATION_BINS,
};
pub use imported::{
    decode_feature_tensor, encode_feature_tensor, read_feature_tensor, write_feature_tensor, TENSOR_MAGIC,
};
pub use interpolate::{idw_weights, interpolate_point_features, CameraProjection, IDW_MAX_CELLS, IDW_NEIGHBORS};
pub use map::{ChannelNormalizer, FeatureMap, Modality};
pub use point::{extract_point_features, PointFeatures, RadiusIndex, POINT_FEATURE_DIM};
pub use swap::{channel_spatial_swap, channel_spatial_swap_padded, swap_subsets, SwapConfig, SwapSubsets};
