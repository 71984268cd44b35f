use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset of the reflected inputs `u = KAPPA - z`. A linear one-class SVM
/// separates data from the origin, so standardized inputs are shifted to sit
/// well inside the positive orthant; larger raw scores map towards the origin.
pub const KAPPA: f64 = 3.0;
/// Fewest training rows for which an SVM is fitted.
pub const MIN_TRAINING_ROWS: usize = 5;
const MIN_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcsvmConfig {
    pub nu: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for OcsvmConfig {
    fn default() -> Self {
        OcsvmConfig {
            nu: 0.1,
            epochs: 500,
            lr: 0.5,
        }
    }
}

/// Linear ν-one-class SVM through the origin: decision value `w·u - ρ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearOcsvm {
    pub w: Vec<f64>,
    pub rho: f64,
    pub nu: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `½‖w‖² + (1/(ν n)) Σ max(0, ρ - w·u_i) - ρ`.
pub fn primal_objective(w: &[f64], rho: f64, rows: &[Vec<f64>], nu: f64) -> f64 {
    let n = rows.len() as f64;
    let hinge: f64 = rows.iter().map(|u| (rho - dot(w, u)).max(0.0)).sum();
    0.5 * dot(w, w) + hinge / (nu * n) - rho
}

/// Optimal offset for fixed `w` and the weights each row carries in the
/// resulting subgradient. With `m = ν n`, the `⌈m⌉` smallest decision values
/// are active: all but the last with weight 1, the last with `m - ⌈m⌉ + 1`.
fn profile(w: &[f64], rows: &[Vec<f64>], nu: f64) -> (f64, Vec<(usize, f64)>) {
    let mut s: Vec<(f64, usize)> = rows.iter().enumerate().map(|(i, u)| (dot(w, u), i)).collect();
    s.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let m = nu * rows.len() as f64;
    let k = ((m - 1e-9).ceil() as usize).clamp(1, rows.len());
    let mut active: Vec<(usize, f64)> = s[..k - 1].iter().map(|&(_, i)| (i, 1.0)).collect();
    active.push((s[k - 1].1, (m - k as f64 + 1.0).clamp(0.0, 1.0)));
    (s[k - 1].0, active)
}

impl LinearOcsvm {
    /// Subgradient descent on the objective with `ρ` profiled out, starting
    /// from the row mean (the exact solution at `ν = 1`), step `lr / √t`,
    /// keeping the best iterate.
    pub fn fit(rows: &[Vec<f64>], cfg: &OcsvmConfig) -> Result<Self> {
        if !(cfg.nu > 0.0 && cfg.nu <= 1.0) {
            return Err(Error::Argument(format!("nu must lie in (0, 1], got {}", cfg.nu)));
        }
        if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                cfg.lr
            )));
        }
        let d = rows
            .first()
            .ok_or_else(|| Error::EmptyInput("no rows to fit".into()))?
            .len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("rows differ in length".into()));
        }
        let n = rows.len() as f64;
        let m = cfg.nu * n;
        let mut w = vec![0.0; d];
        for r in rows {
            for (a, b) in w.iter_mut().zip(r) {
                *a += b / n;
            }
        }
        let (mut rho, _) = profile(&w, rows, cfg.nu);
        let mut best = (primal_objective(&w, rho, rows, cfg.nu), w.clone(), rho);
        for t in 1..=cfg.epochs {
            let (r, active) = profile(&w, rows, cfg.nu);
            rho = r;
            let obj = primal_objective(&w, rho, rows, cfg.nu);
            if obj < best.0 {
                best = (obj, w.clone(), rho);
            }
            let mut g = w.clone();
            for &(i, wt) in &active {
                for (gj, uj) in g.iter_mut().zip(&rows[i]) {
                    *gj -= wt * uj / m;
                }
            }
            let step = cfg.lr / (t as f64).sqrt();
            for (wj, gj) in w.iter_mut().zip(&g) {
                *wj -= step * gj;
            }
        }
        let (r, _) = profile(&w, rows, cfg.nu);
        let obj = primal_objective(&w, r, rows, cfg.nu);
        if obj < best.0 {
            best = (obj, w, r);
        }
        Ok(LinearOcsvm {
            w: best.1,
            rho: best.2,
            nu: cfg.nu,
        })
    }

    pub fn objective(&self, rows: &[Vec<f64>]) -> f64 {
        primal_objective(&self.w, self.rho, rows, self.nu)
    }

    /// `ρ - w·u`, positive outside the learned region.
    pub fn anomaly(&self, u: &[f64]) -> f64 {
        self.rho - dot(&self.w, u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decision {
    Svm(LinearOcsvm),
    /// Degenerate training data: the mean of the centred inputs.
    Mean,
}

/// Standardize, reflect, then score with a linear one-class SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneClassModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub decision: Decision,
}

impl OneClassModel {
    /// Fits on rows from normal data. Fewer than [`MIN_TRAINING_ROWS`] rows or
    /// all-identical rows fall back to [`Decision::Mean`], logged as a warning.
    pub fn fit(rows: &[Vec<f64>], cfg: &OcsvmConfig) -> Result<Self> {
        let d = rows
            .first()
            .ok_or_else(|| Error::EmptyInput("no training rows for the decision model".into()))?
            .len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("training rows must share a positive length".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument("training rows must be finite".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let identical = rows.iter().all(|r| r == &rows[0]);
        if rows.len() < MIN_TRAINING_ROWS || identical {
            log::warn!(
                "decision model: {} training rows{}; falling back to mean fusion",
                rows.len(),
                if identical { ", all identical" } else { "" }
            );
            return Ok(OneClassModel {
                mean: if identical { rows[0].clone() } else { mean },
                scale: vec![1.0; d],
                decision: Decision::Mean,
            });
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| if v.sqrt() > MIN_SCALE { v.sqrt() } else { 1.0 })
            .collect();
        let mut model = OneClassModel {
            mean,
            scale,
            decision: Decision::Mean,
        };
        let u: Vec<Vec<f64>> = rows.iter().map(|r| model.reflect(r)).collect();
        model.decision = Decision::Svm(LinearOcsvm::fit(&u, cfg)?);
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self.decision, Decision::Mean)
    }

    fn reflect(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| KAPPA - (v - m) / s)
            .collect()
    }

    /// Anomaly score of one input row; higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "decision model expects {} inputs, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(match &self.decision {
            Decision::Svm(svm) => svm.anomaly(&self.reflect(x)),
            Decision::Mean => x.iter().zip(&self.mean).map(|(v, m)| v - m).sum::<f64>() / x.len() as f64,
        })
    }
}
