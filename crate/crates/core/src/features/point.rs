use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Descriptor length: three sorted covariance eigenvalues, normal z, neighbor
/// count, height above the cloud centroid.
pub const POINT_FEATURE_DIM: usize = 6;

/// Per-point descriptors, row-major `N × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFeatures {
    dim: usize,
    data: Vec<f64>,
}

impl PointFeatures {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values cannot form rows of width {dim}",
                data.len()
            )));
        }
        Ok(PointFeatures { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Fixed-radius neighbor index over 3D points (uniform voxel hashing).
pub struct RadiusIndex<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl<'a> RadiusIndex<'a> {
    pub fn new(points: &'a [[f64; 3]], radius: f64) -> Self {
        let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, radius)).or_default().push(i);
        }
        RadiusIndex {
            points,
            cell: radius,
            buckets,
        }
    }

    fn key(p: &[f64; 3], cell: f64) -> (i64, i64, i64) {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    }

    /// Indices within `radius` of `q` (inclusive), in ascending order.
    pub fn within(&self, q: &[f64; 3], out: &mut Vec<usize>) {
        out.clear();
        let r2 = self.cell * self.cell;
        let (kx, ky, kz) = Self::key(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &j in b {
                            let p = &self.points[j];
                            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                            if d2 <= r2 {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

/// Local geometric descriptors for every point.
///
/// For each point, the neighbors within `radius` (itself included) give a
/// population covariance whose eigenvalues are reported in ascending order.
/// The normal is the eigenvector of the smallest eigenvalue oriented towards
/// +z; degenerate neighborhoods (fewer than 3 points or a rank-deficient
/// spread) report `n_z = 1`.
pub fn extract_point_features(cloud: &PointCloud, radius: f64) -> Result<PointFeatures> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Argument(format!("radius must be positive, got {radius}")));
    }
    let pts = cloud.points();
    let centroid_z = cloud.centroid()[2];
    let index = RadiusIndex::new(pts, radius);

    let rows: Vec<[f64; POINT_FEATURE_DIM]> = pts
        .par_iter()
        .map_init(Vec::new, |nbrs, p| {
            index.within(p, nbrs);
            let n = nbrs.len() as f64;
            let mut mean = Vector3::zeros();
            for &j in nbrs.iter() {
                mean += Vector3::from(pts[j]);
            }
            mean /= n;
            let mut cov = Matrix3::zeros();
            for &j in nbrs.iter() {
                let d = Vector3::from(pts[j]) - mean;
                cov += d * d.transpose();
            }
            cov /= n;
            let eig = cov.symmetric_eigen();
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let lam = order.map(|i| eig.eigenvalues[i].max(0.0));
            let degenerate = nbrs.len() < 3 || !(lam[1] > 1e-12 * lam[2].max(f64::MIN_POSITIVE));
            let nz = if degenerate {
                1.0
            } else {
                eig.eigenvectors.column(order[0]).z.abs()
            };
            [lam[0], lam[1], lam[2], nz, n, p[2] - centroid_z]
        })
        .collect();

    PointFeatures::new(POINT_FEATURE_DIM, rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planar_points_have_zero_smallest_eigenvalue() {
        let pts: Vec<[f64; 3]> = (0..15)
            .flat_map(|i| (0..15).map(move |j| [i as f64 * 0.1, j as f64 * 0.1, 0.3 * i as f64 * 0.1]))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let f = extract_point_features(&cloud, 0.25).unwrap();
        for i in 0..cloud.len() {
            let (ix, jx) = (i / 15, i % 15);
            if (2..13).contains(&ix) && (2..13).contains(&jx) {
                let r = f.row(i);
                assert!(r[4] >= 8.0);
                assert!(r[0].abs() < 1e-9, "lambda_min {}", r[0]);
                // plane z = 0.3 x has normal ∝ (-0.3, 0, 1)
                assert!((r[3] - 1.0 / (1.09f64).sqrt()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_points_are_degenerate() {
        let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0]; 8]).unwrap();
        let f = extract_point_features(&cloud, 0.1).unwrap();
        for i in 0..8 {
            let r = f.row(i);
            assert_eq!(&r[..3], &[0.0, 0.0, 0.0]);
            assert_eq!(r[3], 1.0);
            assert_eq!(r[4], 8.0);
            assert_eq!(r[5], 0.0);
        }
    }

    #[test]
    fn hemisphere_normals_match_analytic() {
        let r = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<[f64; 3]> = (0..20000)
            .map(|_| {
                // uniform on the upper hemisphere
                let z: f64 = rng.random_range(0.0..1.0);
                let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let s = (1.0 - z * z).sqrt();
                [r * s * phi.cos(), r * s * phi.sin(), r * z]
            })
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let f = extract_point_features(&cloud, 0.08).unwrap();
        let mut checked = 0;
        for (i, p) in pts.iter().enumerate() {
            // skip the rim, where neighborhoods are one-sided
            if p[2] > 0.15 {
                assert!((f.row(i)[3] - p[2] / r).abs() <= 0.05, "point {i}");
                checked += 1;
            }
        }
        assert!(checked > 10000);
    }

    #[test]
    fn non_positive_radius_is_rejected() {
        let cloud = PointCloud::new(vec![[0.0; 3]; 8]).unwrap();
        assert!(matches!(extract_point_features(&cloud, 0.0), Err(Error::Argument(_))));
        assert!(extract_point_features(&cloud, -1.0).is_err());
    }

    #[test]
    fn radius_index_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<[f64; 3]> = (0..300)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>() * 0.2])
            .collect();
        let idx = RadiusIndex::new(&pts, 0.15);
        let mut got = Vec::new();
        for q in &pts {
            idx.within(q, &mut got);
            let want: Vec<usize> = (0..pts.len())
                .filter(|&j| {
                    let p = pts[j];
                    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2) <= 0.15 * 0.15
                })
                .collect();
            assert_eq!(got, want);
        }
    }
}
