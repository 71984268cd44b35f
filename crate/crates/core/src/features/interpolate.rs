use serde::{Deserialize, Serialize};

use super::map::{FeatureMap, Modality};
use super::point::PointFeatures;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Number of nearest projected points blended per cell.
pub const IDW_NEIGHBORS: usize = 3;
/// Search radius in cell widths; farther points never contribute.
pub const IDW_MAX_CELLS: f64 = 4.0;

/// Orthographic top-down camera: world `(x, y)` in mm maps to pixel
/// coordinates `((x - origin_x) / pixel_pitch, (y - origin_y) / pixel_pitch)`,
/// pixel `(i, j)` covering `[i, i+1) × [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraProjection {
    pub pixel_pitch: f64,
    #[serde(default)]
    pub origin_x: f64,
    #[serde(default)]
    pub origin_y: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraProjection {
    pub fn new(pixel_pitch: f64, width: usize, height: usize) -> Result<Self> {
        let cam = CameraProjection {
            pixel_pitch,
            origin_x: 0.0,
            origin_y: 0.0,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch.is_finite()) {
            return Err(Error::Argument(format!(
                "pixel pitch must be positive, got {}",
                self.pixel_pitch
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Argument("camera image must be non-empty".into()));
        }
        Ok(())
    }

    /// Continuous pixel coordinates, or `None` when the point is clipped.
    pub fn project(&self, p: &[f64; 3]) -> Option<(f64, f64)> {
        let u = (p[0] - self.origin_x) / self.pixel_pitch;
        let v = (p[1] - self.origin_y) / self.pixel_pitch;
        (u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64).then_some((u, v))
    }

    /// Inverse of [`project`](Self::project) for the `x, y` components.
    pub fn unproject(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.origin_x + u * self.pixel_pitch,
            self.origin_y + v * self.pixel_pitch,
        )
    }
}

/// Lays point features onto the `grid_h × grid_w` patch grid.
///
/// Distances are measured in cell widths from the cell centre to each
/// projected point. With `interpolate` on, a cell blends the features of
/// its 3 nearest points within 4 cell widths using inverse-square-distance
/// weights (a point exactly at the centre is copied verbatim). With it off,
/// a cell takes the nearest point whose projection falls inside the cell
/// itself. Cells with no eligible point are zero.
pub fn interpolate_point_features(
    features: &PointFeatures,
    cloud: &PointCloud,
    camera: &CameraProjection,
    grid_h: usize,
    grid_w: usize,
    interpolate: bool,
) -> Result<FeatureMap> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("point cloud has no points".into()));
    }
    if features.len() != cloud.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} points",
            features.len(),
            cloud.len()
        )));
    }
    if grid_h == 0 || grid_w == 0 {
        return Err(Error::Argument("feature grid must be non-empty".into()));
    }
    camera.validate()?;
    let patch_size = camera.width / grid_w;
    if patch_size == 0 || camera.height / grid_h != patch_size {
        return Err(Error::Shape(format!(
            "grid {grid_h}x{grid_w} does not tile a {}x{} image with square patches",
            camera.height, camera.width
        )));
    }
    let ps = patch_size as f64;

    // projected positions in cell units, bucketed by cell
    let mut projected = Vec::with_capacity(cloud.len());
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); grid_h * grid_w];
    for (i, p) in cloud.points().iter().enumerate() {
        if let Some((u, v)) = camera.project(p) {
            let (cu, cv) = (u / ps, v / ps);
            let (cx, cy) = (cu.floor() as usize, cv.floor() as usize);
            if cx < grid_w && cy < grid_h {
                buckets[cy * grid_w + cx].push(i);
                projected.push((i, cu, cv));
            }
        }
    }
    let pos: std::collections::HashMap<usize, (f64, f64)> = projected.iter().map(|&(i, u, v)| (i, (u, v))).collect();

    let dim = features.dim();
    let reach = IDW_MAX_CELLS.ceil() as isize + 1;
    let mut vectors = Vec::with_capacity(grid_h * grid_w);
    let mut cands: Vec<(f64, usize)> = Vec::new();
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let (cx, cy) = (gx as f64 + 0.5, gy as f64 + 0.5);
            cands.clear();
            if interpolate {
                for dy in -reach..=reach {
                    for dx in -reach..=reach {
                        let (ny, nx) = (gy as isize + dy, gx as isize + dx);
                        if ny < 0 || nx < 0 || ny >= grid_h as isize || nx >= grid_w as isize {
                            continue;
                        }
                        for &i in &buckets[ny as usize * grid_w + nx as usize] {
                            let (u, v) = pos[&i];
                            let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
                            if d <= IDW_MAX_CELLS {
                                cands.push((d, i));
                            }
                        }
                    }
                }
            } else {
                for &i in &buckets[gy * grid_w + gx] {
                    let (u, v) = pos[&i];
                    cands.push((((u - cx).powi(2) + (v - cy).powi(2)).sqrt(), i));
                }
            }
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let take = if interpolate { IDW_NEIGHBORS } else { 1 };
            cands.truncate(take);
            vectors.push(blend(features, &cands, dim));
        }
    }
    FeatureMap::from_patch_vectors(&vectors, grid_h, grid_w, patch_size, Modality::Cloud3d)
}

/// IDW weights (power 2) for the given distances; a zero distance takes all
/// the weight, shared equally among coincident points.
pub fn idw_weights(distances: &[f64]) -> Vec<f64> {
    let zeros = distances.iter().filter(|&&d| d == 0.0).count();
    if zeros > 0 {
        return distances
            .iter()
            .map(|&d| if d == 0.0 { 1.0 / zeros as f64 } else { 0.0 })
            .collect();
    }
    let inv: Vec<f64> = distances.iter().map(|d| 1.0 / (d * d)).collect();
    let total: f64 = inv.iter().sum();
    inv.iter().map(|w| w / total).collect()
}

fn blend(features: &PointFeatures, cands: &[(f64, usize)], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if cands.is_empty() {
        return out;
    }
    let d: Vec<f64> = cands.iter().map(|c| c.0).collect();
    for (w, &(_, i)) in idw_weights(&d).iter().zip(cands) {
        for (o, f) in out.iter_mut().zip(features.row(i)) {
            *o += w * f;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feats(rows: &[Vec<f64>]) -> PointFeatures {
        PointFeatures::new(rows[0].len(), rows.concat()).unwrap()
    }

    #[test]
    fn point_at_cell_centre_is_copied() {
        // 4x4 image, patch 2: cell (1,0) centre is pixel (3,1)
        let cam = CameraProjection::new(1.0, 4, 4).unwrap();
        let cloud = PointCloud::new(vec![[3.0, 1.0, 0.0]]).unwrap();
        let f = feats(&[vec![0.3, -2.0, 7.5]]);
        for on in [true, false] {
            let m = interpolate_point_features(&f, &cloud, &cam, 2, 2, on).unwrap();
            assert_eq!(m.patch_vector(1), vec![0.3, -2.0, 7.5]);
            if !on {
                assert_eq!(m.patch_vector(0), vec![0.0; 3]);
            }
        }
    }

    #[test]
    fn equidistant_pair_averages() {
        let cam = CameraProjection::new(0.5, 8, 8).unwrap();
        // cell (0,0) at patch 4 has centre pixel (2,2) = world (1,1)
        let cloud = PointCloud::new(vec![[0.5, 1.0, 0.0], [1.5, 1.0, 0.0]]).unwrap();
        let f = feats(&[vec![1.0, 4.0], vec![3.0, -2.0]]);
        let m = interpolate_point_features(&f, &cloud, &cam, 2, 2, true).unwrap();
        let v = m.patch_vector(0);
        assert!((v[0] - 2.0).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn far_cells_are_zero_filled() {
        let cam = CameraProjection::new(1.0, 40, 4).unwrap();
        let cloud = PointCloud::new(vec![[0.5, 0.5, 0.0]]).unwrap();
        let f = feats(&[vec![1.0]]);
        let m = interpolate_point_features(&f, &cloud, &cam, 1, 10, true).unwrap();
        // distances from cell centres (in cells): 0.375 + k
        for k in 0..10 {
            let want = if k <= 3 { 1.0 } else { 0.0 };
            assert_eq!(m.get(0, 0, k), want, "cell {k}");
        }
    }

    #[test]
    fn clipped_points_are_ignored() {
        let cam = CameraProjection::new(1.0, 4, 4).unwrap();
        let cloud = PointCloud::new(vec![[-0.1, 1.0, 0.0], [1.0, 4.0, 0.0]]).unwrap();
        let f = feats(&[vec![1.0], vec![2.0]]);
        let m = interpolate_point_features(&f, &cloud, &cam, 2, 2, true).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_cloud_is_an_error() {
        // an empty cloud cannot be constructed, so the error surfaces there
        assert!(matches!(PointCloud::new(vec![]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn random_cloud_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let (g, ps) = (7usize, 3usize);
        let cam = CameraProjection::new(0.2, g * ps, g * ps).unwrap();
        let span = (g * ps) as f64 * 0.2;
        let pts: Vec<[f64; 3]> = (0..50)
            .map(|_| [rng.random_range(0.0..span), rng.random_range(0.0..span), 0.0])
            .collect();
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let m = interpolate_point_features(&feats(&rows), &cloud, &cam, g, g, true).unwrap();

        // direct evaluation over every point for every cell
        for gy in 0..g {
            for gx in 0..g {
                let (cx, cy) = (gx as f64 + 0.5, gy as f64 + 0.5);
                let mut d: Vec<(f64, usize)> = pts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let (u, v) = (p[0] / 0.2 / ps as f64, p[1] / 0.2 / ps as f64);
                        (((u - cx).powi(2) + (v - cy).powi(2)).sqrt(), i)
                    })
                    .filter(|&(dd, _)| dd <= 4.0)
                    .collect();
                d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                d.truncate(3);
                let wsum: f64 = d.iter().map(|(dd, _)| 1.0 / (dd * dd)).sum();
                for c in 0..4 {
                    let want: f64 = d.iter().map(|&(dd, i)| rows[i][c] / (dd * dd)).sum::<f64>() / wsum;
                    assert!((m.get(c, gy, gx) - want).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn off_mode_takes_nearest_point_inside_cell() {
        let cam = CameraProjection::new(1.0, 4, 4).unwrap();
        let cloud = PointCloud::new(vec![[0.2, 0.2, 0.0], [1.1, 0.9, 0.0], [3.0, 3.0, 0.0]]).unwrap();
        let f = feats(&[vec![1.0], vec![2.0], vec![3.0]]);
        let m = interpolate_point_features(&f, &cloud, &cam, 2, 2, false).unwrap();
        assert_eq!(m.data(), &[2.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn weights_are_a_partition_of_unity() {
        for d in [vec![0.3, 1.2, 2.5], vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 1.0], vec![3.9]] {
            let s: f64 = idw_weights(&d).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }
}
