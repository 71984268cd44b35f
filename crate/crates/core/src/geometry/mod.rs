//! Photometric-stereo normal recovery, normal-to-depth integration and
//! point-cloud resolution handling.

mod cloud;
mod integrate;
mod photometric;
mod rig;

pub use cloud::{farthest_point_order, fps_downsample, PointCloud};
pub use integrate::integrate_normals_to_depth;
pub use photometric::{angle_between, render_lambertian, solve_photometric_stereo, LightStack, NormalMap};
pub use rig::LightingRig;
