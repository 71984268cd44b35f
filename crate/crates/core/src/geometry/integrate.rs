use nalgebra::DMatrix;

use super::photometric::NormalMap;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Lower bound on `n_z` when converting normals to slopes.
const MIN_NZ: f64 = 1e-3;

/// Integrates a normal map into a relative, zero-mean depth map.
///
/// The slope field `(p, q) = (-n_x/n_z, -n_y/n_z)` is averaged onto the grid
/// edges and the depth minimizing the squared forward-difference residual is
/// found in closed form in the cosine basis, which diagonalizes the
/// Neumann grid Laplacian. Invalid pixels are treated as `(0,0,1)`.
pub fn integrate_normals_to_depth(nmap: &NormalMap) -> Result<Raster> {
    let (w, h) = (nmap.width(), nmap.height());
    let frac = nmap.valid_fraction();
    if w == 0 || h == 0 || frac == 0.0 {
        return Err(Error::EmptyInput("normal map has no valid pixels".into()));
    }
    if frac < 0.5 {
        return Err(Error::Argument(format!(
            "only {:.1}% of normals are valid, need at least 50%",
            frac * 100.0
        )));
    }

    let mut p = vec![0.0; w * h];
    let mut q = vec![0.0; w * h];
    for (i, (n, ok)) in nmap.normals().iter().zip(nmap.valid()).enumerate() {
        if *ok {
            let nz = if n[2].abs() < MIN_NZ {
                MIN_NZ.copysign(n[2])
            } else {
                n[2]
            };
            p[i] = -n[0] / nz;
            q[i] = -n[1] / nz;
        }
    }

    // Divergence-like right-hand side of the normal equations L z = b.
    let mut b = DMatrix::<f64>::zeros(h, w);
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            let e = 0.5 * (p[y * w + x] + p[y * w + x + 1]);
            b[(y, x)] -= e;
            b[(y, x + 1)] += e;
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            let e = 0.5 * (q[y * w + x] + q[(y + 1) * w + x]);
            b[(y, x)] -= e;
            b[(y + 1, x)] += e;
        }
    }

    let cy = dct_basis(h);
    let cx = dct_basis(w);
    let mut spec = &cy * b * cx.transpose();
    let ly = laplacian_eigenvalues(h);
    let lx = laplacian_eigenvalues(w);
    for k in 0..h {
        for l in 0..w {
            let lambda = ly[k] + lx[l];
            spec[(k, l)] = if k == 0 && l == 0 { 0.0 } else { spec[(k, l)] / lambda };
        }
    }
    // Inverse DCT-II: scale rows of the forward basis by 1/N (k = 0) or 2/N.
    let iy = inverse_basis(&cy);
    let ix = inverse_basis(&cx);
    let z = iy * spec * ix.transpose();

    let mut data: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| z[(y, x)])
        .collect();
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    data.iter_mut().for_each(|v| *v -= mean);
    Raster::from_vec(w, h, 1, data)
}

/// Rows are DCT-II basis vectors: `C[k][x] = cos(π k (x + ½) / n)`.
fn dct_basis(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |k, x| {
        (std::f64::consts::PI * k as f64 * (x as f64 + 0.5) / n as f64).cos()
    })
}

/// Transposed basis scaled so that `inverse_basis(C) * C = I`.
fn inverse_basis(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    let mut t = c.transpose();
    for k in 0..n {
        let s = if k == 0 { 1.0 } else { 2.0 } / n as f64;
        t.column_mut(k).scale_mut(s);
    }
    t
}

/// Eigenvalues of the 1-D path-graph Laplacian with free ends.
fn laplacian_eigenvalues(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect()
}
