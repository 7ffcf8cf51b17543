//! Soft-margin kernel SVM trained by SMO on a precomputed Gram matrix, and
//! one-vs-all composition for multiclass problems.
//!
//! The solver follows the LIBSVM formulation: minimise `½αᵀQα − eᵀα` subject
//! to `0 ≤ α ≤ C`, `yᵀα = 0`, with `Q_ij = y_i y_j K_ij`. Each step picks the
//! maximal violating index `i` and the partner `j` with the largest
//! second-order decrease, so the run ends only once the KKT gap is below `tol`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelMatrix};

pub const DEFAULT_C: f64 = 10.0;
pub const DEFAULT_TOL: f64 = 1e-3;
const TAU: f64 = 1e-12;
const SUPPORT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoParams {
    pub c: f64,
    pub tol: f64,
    /// Cap on pair updates; `0` means `max(10_000_000, 100 n)`.
    pub max_iter: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        SmoParams {
            c: DEFAULT_C,
            tol: DEFAULT_TOL,
            max_iter: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub labels: Vec<i8>,
    pub support: Vec<usize>,
    pub c: f64,
    pub tol: f64,
    pub kernel: KernelKind,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmModel {
    /// `Σ_i α_i y_i K(x, x_i) + b` given the kernel row of `x` against the training set.
    pub fn decision(&self, kernel_row: &[f64]) -> f64 {
        self.support
            .iter()
            .map(|&i| self.alpha[i] * self.labels[i] as f64 * kernel_row[i])
            .sum::<f64>()
            + self.bias
    }

    /// Dual objective `Σα − ½ Σ_ij α_i α_j y_i y_j K_ij`.
    pub fn dual_objective(&self, gram: &KernelMatrix) -> f64 {
        let mut quad = 0.0;
        for &i in &self.support {
            for &j in &self.support {
                quad += self.alpha[i] * self.alpha[j] * (self.labels[i] * self.labels[j]) as f64 * gram.get(i, j);
            }
        }
        self.alpha.iter().sum::<f64>() - 0.5 * quad
    }

    /// Largest KKT violation over the training set, measured on `y_i f(x_i)`.
    pub fn max_kkt_violation(&self, gram: &KernelMatrix) -> f64 {
        (0..self.alpha.len())
            .map(|i| {
                let margin = self.labels[i] as f64 * self.decision(gram.row(i));
                let a = self.alpha[i];
                if a <= 0.0 {
                    (1.0 - margin).max(0.0)
                } else if a >= self.c {
                    (margin - 1.0).max(0.0)
                } else {
                    (margin - 1.0).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

#[inline]
fn in_up(y: i8, a: f64, c: f64) -> bool {
    (y > 0 && a < c) || (y < 0 && a > 0.0)
}

#[inline]
fn in_low(y: i8, a: f64, c: f64) -> bool {
    (y > 0 && a > 0.0) || (y < 0 && a < c)
}

pub fn smo_train(gram: &KernelMatrix, y: &[i8], params: &SmoParams) -> Result<SvmModel> {
    let n = gram.n;
    if n == 0 {
        return Err(Error::InvalidInput("cannot train an SVM on zero examples".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if y.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::InvalidInput("labels must be ±1".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::InvalidInput("binary SVM needs both classes".into()));
    }
    if !(params.c > 0.0) || !(params.tol > 0.0) {
        return Err(Error::Config(format!("C and tol must be positive, got {params:?}")));
    }
    let c = params.c;
    let eps = 0.5 * params.tol;
    let max_iter = if params.max_iter == 0 {
        10_000_000usize.max(100 * n)
    } else {
        params.max_iter
    };
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let diag: Vec<f64> = (0..n).map(|i| gram.get(i, i)).collect();

    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if in_up(y[t], alpha[t], c) {
                let v = -yf[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let Some(i) = i_sel else {
            converged = true;
            break;
        };
        let krow_i = gram.row(i);

        let mut gmax2 = f64::NEG_INFINITY;
        let mut best_obj = f64::INFINITY;
        let mut j_sel = None;
        for t in 0..n {
            if !in_low(y[t], alpha[t], c) {
                continue;
            }
            let v = yf[t] * grad[t];
            if v > gmax2 {
                gmax2 = v;
            }
            let diff = gmax + v;
            if diff > 0.0 {
                let mut quad = diag[i] + diag[t] - 2.0 * krow_i[t];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let obj = -(diff * diff) / quad;
                if obj < best_obj {
                    best_obj = obj;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < eps {
            converged = true;
            break;
        }
        let Some(j) = j_sel else {
            converged = true;
            break;
        };
        iterations += 1;

        let krow_j = gram.row(j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = diag[i] + diag[j] - 2.0 * krow_i[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        let (si, sj) = (yf[i] * di, yf[j] * dj);
        for t in 0..n {
            grad[t] += yf[t] * (krow_i[t] * si + krow_j[t] * sj);
        }
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} updates without reaching tol {}", params.tol);
    }
    if grad.iter().chain(&alpha).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("SMO produced non-finite values".into()));
    }

    // Offset from the free support vectors, or the middle of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = yf[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum_free += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    let support = (0..n).filter(|&t| alpha[t] > SUPPORT_EPS).collect();
    Ok(SvmModel {
        alpha,
        bias: -rho,
        labels: y.to_vec(),
        support,
        c,
        tol: params.tol,
        kernel: gram.kernel,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiModel {
    pub classes: Vec<String>,
    pub models: Vec<SvmModel>,
    pub kernel: KernelKind,
}

/// One binary model per class: `+1` for that class, `−1` for all others.
pub fn ova_train(gram: &KernelMatrix, labels: &[usize], classes: &[String], params: &SmoParams) -> Result<MultiModel> {
    if classes.len() < 2 {
        return Err(Error::InvalidInput("one-vs-all needs at least 2 classes".into()));
    }
    if labels.len() != gram.n {
        return Err(Error::DimensionMismatch {
            expected: gram.n,
            actual: labels.len(),
        });
    }
    for (c, name) in classes.iter().enumerate() {
        if !labels.contains(&c) {
            return Err(Error::InvalidInput(format!("class `{name}` has no training examples")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
        return Err(Error::InvalidInput(format!("label index {bad} out of range")));
    }
    let models = (0..classes.len())
        .into_par_iter()
        .map(|c| {
            let y: Vec<i8> = labels.iter().map(|&l| if l == c { 1 } else { -1 }).collect();
            smo_train(gram, &y, params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiModel {
        classes: classes.to_vec(),
        models,
        kernel: gram.kernel,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub scores: Vec<f64>,
}

/// Arg-max over per-class decision values; ties go to the lowest class index.
pub fn predict(model: &MultiModel, kernel_row: &[f64]) -> Result<Prediction> {
    let n = model.models.first().map_or(0, |m| m.alpha.len());
    if kernel_row.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: kernel_row.len(),
        });
    }
    let scores: Vec<f64> = model.models.iter().map(|m| m.decision(kernel_row)).collect();
    let class = scores
        .iter()
        .enumerate()
        .fold(0, |best, (c, &s)| if s > scores[best] { c } else { best });
    Ok(Prediction { class, scores })
}

const MODEL_MAGIC: &[u8; 4] = b"VVSV";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub c: f64,
    pub tol: f64,
    pub seed: u64,
    pub training_manifest_hash: String,
    pub kernel: KernelKind,
    pub classes: Vec<String>,
}

pub fn encode_model(model: &MultiModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&model.kernel.id().to_le_bytes());
    out.extend_from_slice(&(model.models.len() as u32).to_le_bytes());
    for m in &model.models {
        out.extend_from_slice(&(m.alpha.len() as u32).to_le_bytes());
        for a in &m.alpha {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out.extend(m.labels.iter().map(|&y| y as u8));
        out.extend_from_slice(&m.bias.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8], sidecar: &ModelSidecar) -> Result<MultiModel> {
    let bad = |message: &str| Error::Format {
        what: "svm model",
        message: message.into(),
    };
    let mut at = 0usize;
    let mut take = |len: usize| -> Result<&[u8]> {
        let s = bytes.get(at..at + len).ok_or_else(|| bad("truncated"))?;
        at += len;
        Ok(s)
    };
    if take(4)? != MODEL_MAGIC {
        return Err(bad("missing VVSV magic"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    if u32_at(take(4)?) != MODEL_VERSION {
        return Err(bad("unsupported version"));
    }
    if u32_at(take(4)?) != sidecar.kernel.id() {
        return Err(bad("kernel id disagrees with sidecar"));
    }
    let classes = u32_at(take(4)?) as usize;
    if classes != sidecar.classes.len() {
        return Err(bad("class count disagrees with sidecar"));
    }
    let mut models = Vec::with_capacity(classes);
    for _ in 0..classes {
        let n = u32_at(take(4)?) as usize;
        let alpha: Vec<f64> = take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels: Vec<i8> = take(n)?.iter().map(|&b| b as i8).collect();
        let bias = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let support = (0..n).filter(|&i| alpha[i] > SUPPORT_EPS).collect();
        models.push(SvmModel {
            alpha,
            bias,
            labels,
            support,
            c: sidecar.c,
            tol: sidecar.tol,
            kernel: sidecar.kernel,
            iterations: 0,
            converged: true,
        });
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(MultiModel {
        classes: sidecar.classes.clone(),
        models,
        kernel: sidecar.kernel,
    })
}

/// Writes `model.bin` and `model.json`.
pub fn save_model(model: &MultiModel, sidecar: &ModelSidecar, dir: &Path) -> Result<()> {
    let bin = dir.join("model.bin");
    fs::write(&bin, encode_model(model)).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join("model.json");
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serialises");
    fs::write(&json, text).map_err(|e| Error::io(&json, e))
}

pub fn load_model(dir: &Path) -> Result<(MultiModel, ModelSidecar)> {
    let json = dir.join("model.json");
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let sidecar: ModelSidecar = serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "model sidecar",
        message: e.to_string(),
    })?;
    let bin = dir.join("model.bin");
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    Ok((decode_model(&bytes, &sidecar)?, sidecar))
}
