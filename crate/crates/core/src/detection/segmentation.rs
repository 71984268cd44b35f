use super::ocsvm::OneClassModel;
use super::scoring::PatchScores;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Blur applied to the upsampled segmentation map, in pixels.
pub const DEFAULT_SIGMA: f64 = 4.0;

/// Patch-level decision values: each patch's score tuple across modalities
/// pushed through `model`.
pub fn patch_decision_map(maps: &[&PatchScores], model: &OneClassModel) -> Result<Vec<f64>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::EmptyInput("no score maps to fuse".into()))?;
    if maps.iter().any(|m| (m.height, m.width) != (first.height, first.width)) {
        return Err(Error::Shape("score maps differ in grid size".into()));
    }
    if maps.len() != model.dim() {
        return Err(Error::Shape(format!(
            "{} score maps for a {}-input decision model",
            maps.len(),
            model.dim()
        )));
    }
    let mut row = vec![0.0; maps.len()];
    (0..first.nearest.len())
        .map(|p| {
            for (r, m) in row.iter_mut().zip(maps) {
                *r = m.nearest[p];
            }
            model.score(&row)
        })
        .collect()
}

/// Bilinear upsampling of a `gh × gw` grid to `out_h × out_w` pixels, where
/// grid cell `(i, j)` is centred on pixel `((j + 0.5)·ps, (i + 0.5)·ps)`.
/// Samples outside the outermost centres are clamped.
pub fn upsample_bilinear(
    grid: &[f64],
    gh: usize,
    gw: usize,
    patch_size: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let ps = patch_size as f64;
    let axis = |p: usize, n: usize| -> (usize, usize, f64) {
        let g = ((p as f64 + 0.5) / ps - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = g.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, g - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, gw)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, ty) = axis(y, gh);
        for &(x0, x1, tx) in &cols {
            let top = grid[y0 * gw + x0] * (1.0 - tx) + grid[y0 * gw + x1] * tx;
            let bot = grid[y1 * gw + x0] * (1.0 - tx) + grid[y1 * gw + x1] * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Separable Gaussian blur with radius `⌈3σ⌉` and clamped borders. `σ = 0`
/// returns the input unchanged.
pub fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(j, w)| w * data[y * width + clamp(x as isize + j as isize - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(j, w)| w * tmp[clamp(y as isize + j as isize - r, height) * width + x])
                .sum();
        }
    }
    out
}

/// Pixel-level anomaly map: patch decision values, bilinearly upsampled to
/// `out_h × out_w`, then blurred with `sigma`.
pub fn fuse_segmentation(
    maps: &[&PatchScores],
    model: &OneClassModel,
    patch_size: usize,
    out_h: usize,
    out_w: usize,
    sigma: f64,
) -> Result<Raster> {
    if patch_size == 0 {
        return Err(Error::Argument("patch size must be positive".into()));
    }
    let grid = patch_decision_map(maps, model)?;
    let (gh, gw) = (maps[0].height, maps[0].width);
    if gh == 0 || gw == 0 {
        return Err(Error::EmptyInput("score maps are empty".into()));
    }
    let up = upsample_bilinear(&grid, gh, gw, patch_size, out_h, out_w);
    let data = gaussian_blur(&up, out_w, out_h, sigma);
    Raster::from_vec(out_w, out_h, 1, data)
}
