//! RBF-kernel support vector classifier trained by sequential minimal
//! optimization, with Platt-calibrated probabilities.
//!
//! The dual solved is
//!
//! ```text
//! min  1/2 a'Qa - e'a   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K(x_i, x_j)
//! ```
//!
//! using the maximal-violating-pair working set and the two-variable
//! analytic update. Features are z-scored inside the model.

use serde::{Deserialize, Serialize};

use crate::corpus_store::Label;
use crate::error::{Error, Result};
use crate::platt::{fit_platt, PlattParams};
use crate::scaler::Scaler;

pub const DEFAULT_TOL: f64 = 1e-3;
/// Hard cap on pair updates regardless of problem size.
pub const MAX_PAIR_UPDATES: usize = 100_000;
const TAU: f64 = 1e-12;

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite kernel input".into()));
    }
    Ok((-gamma * squared_distance(x, y)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
    pub tol: f64,
    /// Recorded for provenance; the solver itself is deterministic.
    pub seed: u64,
}

impl SvmParams {
    pub fn new(c: f64, gamma: f64) -> Self {
        SvmParams {
            c,
            gamma,
            tol: DEFAULT_TOL,
            seed: 0,
        }
    }
}

/// Raw dual solution, in training-row order.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub gap: f64,
}

impl DualSolution {
    /// Value of the maximized dual, `e'a - 1/2 a'Qa`.
    pub fn objective(&self, kernel: &[f64], y: &[f64]) -> f64 {
        dual_objective(&self.alpha, kernel, y)
    }
}

pub fn dual_objective(alpha: &[f64], kernel: &[f64], y: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * kernel[i * n + j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Dense row-major kernel matrix.
pub fn kernel_matrix(rows: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let n = rows.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = (-gamma * squared_distance(&rows[i], &rows[j])).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

pub fn max_pair_updates(n: usize) -> usize {
    (10 * n * n).clamp(1, MAX_PAIR_UPDATES)
}

/// SMO on a precomputed kernel matrix with labels in {-1, +1}.
pub fn solve_dual(kernel: &[f64], y: &[f64], c: f64, tol: f64) -> Result<DualSolution> {
    let n = y.len();
    assert_eq!(kernel.len(), n * n);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let cap = max_pair_updates(n);
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i * n + j];

    let mut iterations = 0;
    let gap = loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let low = (y[t] < 0.0 && alpha[t] < c) || (y[t] > 0.0 && alpha[t] > 0.0);
            if up && v > gmax {
                gmax = v;
                i = t;
            }
            if low && v < gmin {
                gmin = v;
                j = t;
            }
        }
        let gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < tol {
            break gap.max(0.0);
        }
        if iterations >= cap {
            return Err(Error::NoConvergence { iterations, gap });
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
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
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
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
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
    };

    // bias = -rho, rho averaged over free vectors or bracketed by the bounds
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 {
        free_sum / free_n as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(DualSolution {
        alpha,
        bias: -rho,
        iterations,
        gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub format_version: u32,
    pub params: SvmParams,
    pub scaler: Scaler,
    /// Support vectors in original feature units.
    pub support_vectors: Vec<Vec<f64>>,
    /// Support vectors after scaling; these enter the kernel.
    pub scaled_support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub dual_coefs: Vec<f64>,
    /// Training-row index of each support vector.
    pub support_indices: Vec<usize>,
    pub bias: f64,
    pub platt: PlattParams,
    pub iterations: usize,
}

pub const SVM_FORMAT_VERSION: u32 = 1;

pub fn train_svm(x: &[&[f64]], labels: &[Label], params: SvmParams) -> Result<SvmModel> {
    if x.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if x.len() != labels.len() {
        return Err(Error::InvalidInput("features and labels differ in length".into()));
    }
    if !(params.c > 0.0) || !(params.gamma > 0.0) || !(params.tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "C, gamma and tol must be positive (C={}, gamma={}, tol={})",
            params.c, params.gamma, params.tol
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == Label::Pathologic).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass(labels[0].as_u8()));
    }
    let scaler = Scaler::fit(x)?;
    let scaled: Vec<Vec<f64>> = x.iter().map(|r| scaler.transform(r)).collect::<Result<_>>()?;
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let kernel = kernel_matrix(&scaled, params.gamma);
    let sol = solve_dual(&kernel, &y, params.c, params.tol)?;

    let n = y.len();
    let decisions: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| sol.alpha[j] > 0.0)
                .map(|j| sol.alpha[j] * y[j] * kernel[j * n + i])
                .sum::<f64>()
                + sol.bias
        })
        .collect();
    let platt = fit_platt(&decisions, labels)?;

    let support_indices: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    Ok(SvmModel {
        format_version: SVM_FORMAT_VERSION,
        params,
        support_vectors: support_indices.iter().map(|&i| x[i].to_vec()).collect(),
        scaled_support_vectors: support_indices.iter().map(|&i| scaled[i].clone()).collect(),
        dual_coefs: support_indices.iter().map(|&i| sol.alpha[i] * y[i]).collect(),
        support_indices,
        scaler,
        bias: sol.bias,
        platt,
        iterations: sol.iterations,
    })
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        let z = self.scaler.transform(x)?;
        Ok(self.decision_scaled(&z))
    }

    /// Decision value for an already scaled input.
    pub fn decision_scaled(&self, z: &[f64]) -> f64 {
        self.scaled_support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, coef)| coef * (-self.params.gamma * squared_distance(sv, z)).exp())
            .sum::<f64>()
            + self.bias
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(self.platt.probability(self.decision_value(x)?))
    }

    /// Label of each support vector, from the sign of its coefficient.
    pub fn support_labels(&self) -> Vec<Label> {
        self.dual_coefs
            .iter()
            .map(|&c| if c > 0.0 { Label::Pathologic } else { Label::Control })
            .collect()
    }

    pub fn dual_coef_sum(&self) -> f64 {
        self.dual_coefs.iter().sum()
    }
}
