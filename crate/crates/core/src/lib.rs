//! Multimodal industrial anomaly detection over RGB images, photometric-stereo
//! normal maps and point clouds.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: photometric stereo, depth integration, point-cloud downsampling.
//! * [`features`]: per-modality patch descriptors, point-feature interpolation,
//!   channel-spatial swapping and contrastive 2D/3D alignment.
//! * [`detection`]: coreset memory banks, nearest-neighbor scoring, one-class
//!   decision fusion and AUROC.
//! * [`data`]: dataset trees on disk and a synthetic scene generator.
//! * [`pipeline`]: fit / evaluate / ablate drivers used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod detection;
pub mod error;
pub mod features;
pub mod geometry;
pub mod pipeline;
pub mod raster;

pub use error::{Error, Result};
pub use raster::{Mask, Raster};
