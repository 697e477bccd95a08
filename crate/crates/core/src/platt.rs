//! Sigmoid calibration of margin scores, `p(f) = 1 / (1 + exp(A f + B))`,
//! fitted by regularized maximum likelihood with smoothed targets
//! `(N+ + 1) / (N+ + 2)` and `1 / (N- + 2)`. The optimizer is a Newton
//! method with backtracking line search.

use serde::{Deserialize, Serialize};

use crate::corpus_store::Label;
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const MIN_STEP: f64 = 1e-10;
const HESSIAN_RIDGE: f64 = 1e-12;
const GRAD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    pub fn probability(&self, decision: f64) -> f64 {
        sigmoid_neg(self.a * decision + self.b)
    }
}

/// `1 / (1 + exp(z))` without overflow.
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

fn objective(decisions: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    decisions
        .iter()
        .zip(targets)
        .map(|(&f, &t)| {
            let z = f * a + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

pub fn fit_platt(decisions: &[f64], labels: &[Label]) -> Result<PlattParams> {
    if decisions.len() != labels.len() {
        return Err(Error::InvalidInput("decision values and labels differ in length".into()));
    }
    if decisions.iter().any(|f| !f.is_finite()) {
        return Err(Error::InvalidInput("non-finite decision value".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == Label::Pathologic).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(if n_pos == 0 { 0 } else { 1 }));
    }
    let first = decisions[0];
    if decisions.iter().all(|&f| f == first) {
        return Err(Error::Degenerate("all decision values are identical".into()));
    }

    let hi = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let lo = 1.0 / (n_neg as f64 + 2.0);
    let targets: Vec<f64> = labels
        .iter()
        .map(|&l| if l == Label::Pathologic { hi } else { lo })
        .collect();

    let mut a = 0.0;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut fval = objective(decisions, &targets, a, b);

    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21) = (HESSIAN_RIDGE, HESSIAN_RIDGE, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&f, &t) in decisions.iter().zip(&targets) {
            let p = sigmoid_neg(f * a + b);
            let d2 = p * (1.0 - p);
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < GRAD_EPS && g2.abs() < GRAD_EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        let mut accepted = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(decisions, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    Ok(PlattParams { a, b })
}
