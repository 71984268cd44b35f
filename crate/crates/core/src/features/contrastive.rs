use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::map::{FeatureMap, Modality};
use crate::error::{Error, Result};

/// Two-layer projection `x ↦ normalize(softplus(W2·softplus(W1·x + b1) + b2))`.
///
/// The output softplus keeps every coordinate positive, so dot products
/// between projections are non-negative and the alignment ratio stays in
/// `[0, 1]`. The hidden softplus does not saturate, so outlying patches stay
/// outlying after projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    input_dim: usize,
    dim: usize,
    /// `[W1 (dim × input_dim), b1, W2 (dim × dim), b2]`, row-major.
    params: Vec<f64>,
}

struct Forward {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    pre: Vec<f64>,
    norm: f64,
    out: Vec<f64>,
}

impl ProjectionHead {
    /// Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || dim == 0 {
            return Err(Error::Argument(format!(
                "projection head needs positive dimensions, got {input_dim} -> {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; dim * input_dim + dim + dim * dim + dim];
        let s1 = (6.0 / (input_dim + dim) as f64).sqrt();
        let s2 = (6.0 / (2 * dim) as f64).sqrt();
        for w in &mut params[..dim * input_dim] {
            *w = rng.random_range(-s1..s1);
        }
        let o = dim * input_dim + dim;
        for w in &mut params[o..o + dim * dim] {
            *w = rng.random_range(-s2..s2);
        }
        Ok(ProjectionHead { input_dim, dim, params })
    }

    pub fn from_params(input_dim: usize, dim: usize, params: Vec<f64>) -> Result<Self> {
        let want = dim * input_dim + dim + dim * dim + dim;
        if input_dim == 0 || dim == 0 || params.len() != want {
            return Err(Error::Shape(format!(
                "{} parameters for a {input_dim} -> {dim} head (expected {want})",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Argument("projection head weights must be finite".into()));
        }
        Ok(ProjectionHead { input_dim, dim, params })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.dim * self.input_dim;
        let w2 = b1 + self.dim;
        let b2 = w2 + self.dim * self.dim;
        (b1, w2, b2)
    }

    fn forward_full(&self, x: &[f64]) -> Forward {
        let (ob1, ow2, ob2) = self.offsets();
        let (n, p) = (self.input_dim, self.dim);
        let w = &self.params;
        let hidden_pre: Vec<f64> = (0..p)
            .map(|r| {
                let row = &w[r * n..(r + 1) * n];
                let s: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                s + w[ob1 + r]
            })
            .collect();
        let hidden: Vec<f64> = hidden_pre.iter().map(|&t| softplus(t)).collect();
        let pre: Vec<f64> = (0..p)
            .map(|r| {
                let row = &w[ow2 + r * p..ow2 + (r + 1) * p];
                row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() + w[ob2 + r]
            })
            .collect();
        let z: Vec<f64> = pre.iter().map(|&t| softplus(t)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let out = z.iter().map(|v| v / norm).collect();
        Forward {
            hidden_pre,
            hidden,
            pre,
            norm,
            out,
        }
    }

    /// Unit-length projection of one feature vector.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_full(x).out
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂out` for input `x`.
    fn backward(&self, x: &[f64], f: &Forward, dout: &[f64], grad: &mut [f64]) {
        let (ob1, ow2, ob2) = self.offsets();
        let (n, p) = (self.input_dim, self.dim);
        let ydot: f64 = f.out.iter().zip(dout).map(|(a, b)| a * b).sum();
        let dpre: Vec<f64> = (0..p)
            .map(|r| {
                let dz = (dout[r] - f.out[r] * ydot) / f.norm;
                dz * sigmoid(f.pre[r])
            })
            .collect();
        let mut dh = vec![0.0; p];
        for r in 0..p {
            grad[ob2 + r] += dpre[r];
            for c in 0..p {
                grad[ow2 + r * p + c] += dpre[r] * f.hidden[c];
                dh[c] += self.params[ow2 + r * p + c] * dpre[r];
            }
        }
        for r in 0..p {
            let da = dh[r] * sigmoid(f.hidden_pre[r]);
            grad[ob1 + r] += da;
            for c in 0..n {
                grad[r * n + c] += da * x[c];
            }
        }
    }
}

#[inline]
fn softplus(t: f64) -> f64 {
    if t > 30.0 {
        t
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-sample, per-patch feature vectors.
type PatchSets = Vec<Vec<Vec<f64>>>;

/// `N_b` samples, each with `N_p` aligned 2D/3D patch-feature pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    x2d: PatchSets,
    x3d: PatchSets,
}

impl ContrastiveBatch {
    pub fn new(x2d: PatchSets, x3d: PatchSets) -> Result<Self> {
        if x2d.is_empty() {
            return Err(Error::EmptyInput("contrastive batch has no samples".into()));
        }
        if x2d.len() != x3d.len() {
            return Err(Error::Shape(format!(
                "{} 2D samples but {} 3D samples",
                x2d.len(),
                x3d.len()
            )));
        }
        let np = x2d[0].len();
        if np == 0 {
            return Err(Error::EmptyInput("contrastive batch has no patches".into()));
        }
        for (i, (a, b)) in x2d.iter().zip(&x3d).enumerate() {
            if a.len() != np || b.len() != np {
                return Err(Error::Shape(format!(
                    "sample {i} has {}/{} patches, expected {np}",
                    a.len(),
                    b.len()
                )));
            }
        }
        Ok(ContrastiveBatch { x2d, x3d })
    }

    /// One sample per `(2D map, 3D map)` pair; maps must share the grid.
    pub fn from_maps(pairs: &[(&FeatureMap, &FeatureMap)]) -> Result<Self> {
        let mut x2d = Vec::with_capacity(pairs.len());
        let mut x3d = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            if (a.height(), a.width()) != (b.height(), b.width()) {
                return Err(Error::Shape(format!(
                    "2D grid {}x{} differs from 3D grid {}x{}",
                    a.height(),
                    a.width(),
                    b.height(),
                    b.width()
                )));
            }
            x2d.push(a.patch_vectors());
            x3d.push(b.patch_vectors());
        }
        Self::new(x2d, x3d)
    }

    pub fn samples(&self) -> usize {
        self.x2d.len()
    }

    pub fn patches(&self) -> usize {
        self.x2d[0].len()
    }

    fn subset(&self, idx: &[usize]) -> ContrastiveBatch {
        ContrastiveBatch {
            x2d: idx.iter().map(|&i| self.x2d[i].clone()).collect(),
            x3d: idx.iter().map(|&i| self.x3d[i].clone()).collect(),
        }
    }

    fn check_heads(&self, h2: &ProjectionHead, h3: &ProjectionHead) -> Result<()> {
        if h2.dim() != h3.dim() {
            return Err(Error::Shape(format!(
                "head output dimensions differ: {} vs {}",
                h2.dim(),
                h3.dim()
            )));
        }
        for (i, (a, b)) in self.x2d.iter().zip(&self.x3d).enumerate() {
            if a.iter().any(|v| v.len() != h2.input_dim()) || b.iter().any(|v| v.len() != h3.input_dim()) {
                return Err(Error::Shape(format!(
                    "sample {i} feature widths do not match heads {} / {}",
                    h2.input_dim(),
                    h3.input_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Per-sample alignment ratios from precomputed projections `u[i][j]`, `v[i][j]`:
/// `r_i = Σ_j u_ij·v_ij / Σ_k Σ_j u_ij·v_kj`.
pub fn alignment_ratios(u: &[Vec<Vec<f64>>], v: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let nb = u.len();
    let mut out = Vec::with_capacity(nb);
    for i in 0..nb {
        let num: f64 = u[i].iter().zip(&v[i]).map(|(a, b)| dot(a, b)).sum();
        let mut den = 0.0;
        for vk in v {
            den += u[i].iter().zip(vk).map(|(a, b)| dot(a, b)).sum::<f64>();
        }
        if den == 0.0 || !den.is_finite() {
            return Err(Error::DegenerateBatch(format!(
                "alignment denominator of sample {i} is {den}"
            )));
        }
        out.push(num / den);
    }
    Ok(out)
}

fn project_all(batch: &ContrastiveBatch, h2: &ProjectionHead, h3: &ProjectionHead) -> (PatchSets, PatchSets) {
    let u = batch
        .x2d
        .par_iter()
        .map(|s| s.iter().map(|x| h2.forward(x)).collect())
        .collect();
    let v = batch
        .x3d
        .par_iter()
        .map(|s| s.iter().map(|x| h3.forward(x)).collect())
        .collect();
    (u, v)
}

/// Mean alignment ratio of the batch under the given heads.
pub fn contrastive_loss(batch: &ContrastiveBatch, head_2d: &ProjectionHead, head_3d: &ProjectionHead) -> Result<f64> {
    batch.check_heads(head_2d, head_3d)?;
    let (u, v) = project_all(batch, head_2d, head_3d);
    let r = alignment_ratios(&u, &v)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Training objective `mean_i −ln r_i` and its gradient with respect to the
/// parameters of both heads.
pub fn objective_and_gradient(
    batch: &ContrastiveBatch,
    head_2d: &ProjectionHead,
    head_3d: &ProjectionHead,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    batch.check_heads(head_2d, head_3d)?;
    let nb = batch.samples();
    let np = batch.patches();
    let p = head_2d.dim();
    let fu: Vec<Vec<Forward>> = batch
        .x2d
        .par_iter()
        .map(|s| s.iter().map(|x| head_2d.forward_full(x)).collect())
        .collect();
    let fv: Vec<Vec<Forward>> = batch
        .x3d
        .par_iter()
        .map(|s| s.iter().map(|x| head_3d.forward_full(x)).collect())
        .collect();

    // V_j = Σ_k v_kj
    let mut vsum = vec![vec![0.0; p]; np];
    for s in &fv {
        for (acc, f) in vsum.iter_mut().zip(s) {
            for (a, b) in acc.iter_mut().zip(&f.out) {
                *a += b;
            }
        }
    }
    let mut num = vec![0.0; nb];
    let mut den = vec![0.0; nb];
    for i in 0..nb {
        for j in 0..np {
            num[i] += dot(&fu[i][j].out, &fv[i][j].out);
            den[i] += dot(&fu[i][j].out, &vsum[j]);
        }
        if !(num[i] > 0.0 && den[i] > 0.0) {
            return Err(Error::DegenerateBatch(format!(
                "sample {i} has alignment {}/{}",
                num[i], den[i]
            )));
        }
    }
    let loss = (0..nb).map(|i| den[i].ln() - num[i].ln()).sum::<f64>() / nb as f64;

    // S_j = Σ_i u_ij / D_i
    let mut usum = vec![vec![0.0; p]; np];
    for i in 0..nb {
        for j in 0..np {
            for (a, b) in usum[j].iter_mut().zip(&fu[i][j].out) {
                *a += b / den[i];
            }
        }
    }
    let scale = 1.0 / nb as f64;
    let grads: Vec<(Vec<f64>, Vec<f64>)> = (0..nb)
        .into_par_iter()
        .map(|i| {
            let mut g2 = vec![0.0; head_2d.params.len()];
            let mut g3 = vec![0.0; head_3d.params.len()];
            let mut du = vec![0.0; p];
            let mut dv = vec![0.0; p];
            for j in 0..np {
                let (u, v) = (&fu[i][j].out, &fv[i][j].out);
                for d in 0..p {
                    du[d] = scale * (vsum[j][d] / den[i] - v[d] / num[i]);
                    dv[d] = scale * (usum[j][d] - u[d] / num[i]);
                }
                head_2d.backward(&batch.x2d[i][j], &fu[i][j], &du, &mut g2);
                head_3d.backward(&batch.x3d[i][j], &fv[i][j], &dv, &mut g3);
            }
            (g2, g3)
        })
        .collect();
    // fixed-order reduction keeps results independent of the thread count
    let mut g2 = vec![0.0; head_2d.params.len()];
    let mut g3 = vec![0.0; head_3d.params.len()];
    for (a, b) in &grads {
        for (acc, x) in g2.iter_mut().zip(a) {
            *acc += x;
        }
        for (acc, x) in g3.iter_mut().zip(b) {
            *acc += x;
        }
    }
    Ok((loss, g2, g3))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Samples per gradient step; 0 uses the whole set.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 0.05,
            batch_size: 0,
            seed: 0,
        }
    }
}

/// Trained 2D/3D heads that emit the fused representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub head_2d: ProjectionHead,
    pub head_3d: ProjectionHead,
    /// Full-set objective before training and after every epoch.
    pub loss_curve: Vec<f64>,
}

impl FusionModel {
    /// Per patch, the concatenation of both unit-length projections.
    pub fn fuse(&self, map_2d: &FeatureMap, map_3d: &FeatureMap) -> Result<FeatureMap> {
        if (map_2d.height(), map_2d.width()) != (map_3d.height(), map_3d.width()) {
            return Err(Error::Shape(format!(
                "2D grid {}x{} differs from 3D grid {}x{}",
                map_2d.height(),
                map_2d.width(),
                map_3d.height(),
                map_3d.width()
            )));
        }
        if map_2d.channels() != self.head_2d.input_dim() || map_3d.channels() != self.head_3d.input_dim() {
            return Err(Error::Shape(format!(
                "feature widths {}/{} do not match heads {}/{}",
                map_2d.channels(),
                map_3d.channels(),
                self.head_2d.input_dim(),
                self.head_3d.input_dim()
            )));
        }
        let a = map_2d.patch_vectors();
        let b = map_3d.patch_vectors();
        let fused: Vec<Vec<f64>> = a
            .par_iter()
            .zip(&b)
            .map(|(x, y)| {
                let mut v = self.head_2d.forward(x);
                v.extend(self.head_3d.forward(y));
                v
            })
            .collect();
        FeatureMap::from_patch_vectors(
            &fused,
            map_2d.height(),
            map_2d.width(),
            map_2d.patch_size(),
            Modality::Fused,
        )
    }
}

/// Gradient descent on `mean_i −ln r_i` over seeded mini-batches.
pub fn train_fusion(
    batch: &ContrastiveBatch,
    head_2d: ProjectionHead,
    head_3d: ProjectionHead,
    cfg: &TrainConfig,
) -> Result<FusionModel> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Argument(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    batch.check_heads(&head_2d, &head_3d)?;
    let mut h2 = head_2d;
    let mut h3 = head_3d;
    let initial = objective_and_gradient(batch, &h2, &h3)?.0;
    let mut curve = vec![initial];
    if cfg.epochs == 0 {
        return Ok(FusionModel {
            head_2d: h2,
            head_3d: h3,
            loss_curve: curve,
        });
    }
    let nb = batch.samples();
    let bs = if cfg.batch_size == 0 {
        nb
    } else {
        cfg.batch_size.min(nb)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..nb).collect();
    for epoch in 1..=cfg.epochs {
        if bs < nb {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(bs) {
            let sub;
            let b = if bs == nb {
                batch
            } else {
                sub = batch.subset(chunk);
                &sub
            };
            let (loss, g2, g3) = match objective_and_gradient(b, &h2, &h3) {
                Ok(r) => r,
                Err(Error::DegenerateBatch(_)) => {
                    return Err(Error::Divergence {
                        epoch,
                        lr: cfg.lr,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    lr: cfg.lr,
                    loss,
                });
            }
            for (w, g) in h2.params.iter_mut().zip(&g2) {
                *w -= cfg.lr * g;
            }
            for (w, g) in h3.params.iter_mut().zip(&g3) {
                *w -= cfg.lr * g;
            }
        }
        if h2.params.iter().chain(&h3.params).any(|w| !w.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                lr: cfg.lr,
                loss: f64::NAN,
            });
        }
        let loss = match objective_and_gradient(batch, &h2, &h3) {
            Ok(r) => r.0,
            Err(Error::DegenerateBatch(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                lr: cfg.lr,
                loss,
            });
        }
        log::debug!("fusion epoch {epoch}: objective {loss:.6}");
        curve.push(loss);
    }
    Ok(FusionModel {
        head_2d: h2,
        head_3d: h3,
        loss_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(nb: usize, np: usize, c2: usize, c3: usize, seed: u64) -> ContrastiveBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = |c: usize| -> Vec<Vec<Vec<f64>>> {
            (0..nb)
                .map(|_| {
                    (0..np)
                        .map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .collect()
                })
                .collect()
        };
        let a = gen(c2);
        let b = gen(c3);
        ContrastiveBatch::new(a, b).unwrap()
    }

    #[test]
    fn single_sample_ratio_is_exactly_one() {
        let batch = random_batch(1, 5, 4, 3, 1);
        let h2 = ProjectionHead::new(4, 6, 2).unwrap();
        let h3 = ProjectionHead::new(3, 6, 3).unwrap();
        assert_eq!(contrastive_loss(&batch, &h2, &h3).unwrap(), 1.0);
    }

    #[test]
    fn orthogonal_cross_sample_projections_give_unit_ratios() {
        let e = |k: usize| {
            let mut v = vec![0.0; 4];
            v[k] = 1.0;
            v
        };
        let u = vec![vec![e(0), e(1)], vec![e(2), e(3)]];
        let v = u.clone();
        assert_eq!(alignment_ratios(&u, &v).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn zero_denominator_is_degenerate() {
        let u = vec![vec![vec![0.0, 0.0]]];
        assert!(matches!(alignment_ratios(&u, &u), Err(Error::DegenerateBatch(_))));
    }

    #[test]
    fn loss_matches_double_loop_oracle() {
        let batch = random_batch(3, 4, 5, 6, 9);
        let h2 = ProjectionHead::new(5, 7, 10).unwrap();
        let h3 = ProjectionHead::new(6, 7, 11).unwrap();
        let got = contrastive_loss(&batch, &h2, &h3).unwrap();

        // independent forward pass written out directly
        let proj = |h: &ProjectionHead, x: &[f64]| -> Vec<f64> {
            let (n, p) = (h.input_dim(), h.dim());
            let w = h.params();
            let mut hid = vec![0.0; p];
            for r in 0..p {
                let mut s = w[p * n + r];
                for c in 0..n {
                    s += w[r * n + c] * x[c];
                }
                hid[r] = (1.0 + s.exp()).ln();
            }
            let o = p * n + p;
            let mut z = vec![0.0; p];
            for r in 0..p {
                let mut s = w[o + p * p + r];
                for c in 0..p {
                    s += w[o + r * p + c] * hid[c];
                }
                z[r] = (1.0 + s.exp()).ln();
            }
            let nrm = z.iter().map(|a| a * a).sum::<f64>().sqrt();
            z.iter().map(|a| a / nrm).collect()
        };
        let mut total = 0.0;
        for i in 0..3 {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..4 {
                let ui = proj(&h2, &batch.x2d[i][j]);
                num += dot(&ui, &proj(&h3, &batch.x3d[i][j]));
                for k in 0..3 {
                    den += dot(&ui, &proj(&h3, &batch.x3d[k][j]));
                }
            }
            total += num / den;
        }
        assert!((got - total / 3.0).abs() <= 1e-12);
        assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let batch = random_batch(2, 3, 4, 3, 21);
        let h2 = ProjectionHead::new(4, 5, 22).unwrap();
        let h3 = ProjectionHead::new(3, 5, 23).unwrap();
        let (_, g2, g3) = objective_and_gradient(&batch, &h2, &h3).unwrap();
        let eps = 1e-5;
        let obj = |a: &ProjectionHead, b: &ProjectionHead| objective_and_gradient(&batch, a, b).unwrap().0;
        let check = |analytic: f64, numeric: f64, what: &str| {
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / scale <= 1e-4,
                "{what}: analytic {analytic} vs numeric {numeric}"
            );
        };
        for k in 0..h2.params().len() {
            let (mut p, mut m) = (h2.clone(), h2.clone());
            p.params_mut()[k] += eps;
            m.params_mut()[k] -= eps;
            check(
                g2[k],
                (obj(&p, &h3) - obj(&m, &h3)) / (2.0 * eps),
                &format!("2d param {k}"),
            );
        }
        for k in 0..h3.params().len() {
            let (mut p, mut m) = (h3.clone(), h3.clone());
            p.params_mut()[k] += eps;
            m.params_mut()[k] -= eps;
            check(
                g3[k],
                (obj(&h2, &p) - obj(&h2, &m)) / (2.0 * eps),
                &format!("3d param {k}"),
            );
        }
    }

    #[test]
    fn zero_epochs_leave_heads_unchanged() {
        let batch = random_batch(3, 4, 4, 3, 5);
        let h2 = ProjectionHead::new(4, 5, 6).unwrap();
        let h3 = ProjectionHead::new(3, 5, 7).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let m = train_fusion(&batch, h2.clone(), h3.clone(), &cfg).unwrap();
        assert_eq!(m.head_2d, h2);
        assert_eq!(m.head_3d, h3);
        assert_eq!(m.loss_curve.len(), 1);
    }

    #[test]
    fn training_decreases_objective() {
        // 3D features are a noisy linear image of the 2D ones, so alignment is learnable
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..10 {
            let mut sa = Vec::new();
            let mut sb = Vec::new();
            for _ in 0..6 {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = vec![x[0] + x[1], x[2] - x[3], 0.5 * x[0] + rng.random_range(-0.05..0.05)];
                sa.push(x);
                sb.push(y);
            }
            a.push(sa);
            b.push(sb);
        }
        let batch = ContrastiveBatch::new(a, b).unwrap();
        let h2 = ProjectionHead::new(4, 8, 1).unwrap();
        let h3 = ProjectionHead::new(3, 8, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            lr: 0.5,
            batch_size: 0,
            seed: 3,
        };
        let m = train_fusion(&batch, h2, h3, &cfg).unwrap();
        assert_eq!(m.loss_curve.len(), 51);
        assert!(m.loss_curve[50] < m.loss_curve[0], "{:?}", m.loss_curve);
    }

    #[test]
    fn training_is_deterministic_with_minibatches() {
        let batch = random_batch(6, 3, 4, 3, 8);
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.1,
            batch_size: 2,
            seed: 4,
        };
        let run = || {
            train_fusion(
                &batch,
                ProjectionHead::new(4, 5, 1).unwrap(),
                ProjectionHead::new(3, 5, 2).unwrap(),
                &cfg,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn exploding_learning_rate_reports_divergence() {
        let batch = random_batch(4, 3, 4, 3, 8);
        let cfg = TrainConfig {
            epochs: 5,
            lr: 1e300,
            batch_size: 0,
            seed: 0,
        };
        let r = train_fusion(
            &batch,
            ProjectionHead::new(4, 5, 1).unwrap(),
            ProjectionHead::new(3, 5, 2).unwrap(),
            &cfg,
        );
        match r {
            Err(Error::Divergence { epoch, lr, .. }) => {
                assert_eq!(epoch, 1);
                assert_eq!(lr, 1e300);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn fused_map_concatenates_unit_projections() {
        let h2 = ProjectionHead::new(2, 3, 1).unwrap();
        let h3 = ProjectionHead::new(1, 3, 2).unwrap();
        let m = FusionModel {
            head_2d: h2,
            head_3d: h3,
            loss_curve: vec![],
        };
        let a = FeatureMap::new(2, 2, 2, 4, Modality::Rgb, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap();
        let b = FeatureMap::new(1, 2, 2, 4, Modality::Cloud3d, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = m.fuse(&a, &b).unwrap();
        assert_eq!(f.channels(), 6);
        assert_eq!(f.modality(), Modality::Fused);
        for v in f.patch_vectors() {
            let n1: f64 = v[..3].iter().map(|x| x * x).sum();
            let n2: f64 = v[3..].iter().map(|x| x * x).sum();
            assert!((n1 - 1.0).abs() < 1e-12 && (n2 - 1.0).abs() < 1e-12);
        }
    }
}
