//! Exact t-SNE with a Student-t output kernel.
//!
//! Per-point bandwidths are found by bisection on the precision of each
//! row after dividing the row's distances by their mean, which makes the
//! search, and hence `P`, invariant to a global rescaling of the input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENTROPY_TOL: f64 = 1e-5;
pub const MAX_BISECTION_STEPS: usize = 64;
const DUPLICATE_JITTER: f64 = 1e-10;
const MIN_GAIN: f64 = 0.01;
const Q_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub n_iter: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl TsneConfig {
    pub fn new(perplexity: f64, seed: u64) -> Self {
        TsneConfig {
            perplexity,
            n_iter: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init_std: 1e-4,
            seed,
        }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if !(self.perplexity > 1.0) {
            return Err(Error::InvalidInput(format!("perplexity must exceed 1, got {}", self.perplexity)));
        }
        if (n_points as f64) < 3.0 * self.perplexity {
            return Err(Error::TooFewRows(format!(
                "t-SNE with perplexity {} needs at least {} points, got {n_points}",
                self.perplexity,
                (3.0 * self.perplexity).ceil()
            )));
        }
        Ok(())
    }
}

/// Dense row-major squared Euclidean distances.
pub fn pairwise_sq_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Shannon entropy in bits of a probability row (zero entries skipped).
pub fn entropy_bits(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>()
}

/// Gaussian row for precision `beta` over normalized distances, with the
/// entry for `skip` left at zero. Returns the entropy in bits.
fn gaussian_row(dist: &[f64], skip: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == skip {
            *o = 0.0;
            continue;
        }
        let shifted = d - min;
        let v = (-beta * shifted).exp();
        *o = v;
        sum += v;
        weighted += shifted * v;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    (sum.ln() + beta * weighted / sum) / std::f64::consts::LN_2
}

/// Conditional probabilities `P(j|i)` (row-major, zero diagonal) whose rows
/// each have entropy `log2(perplexity)`.
pub fn perplexity_calibration(sq_distances: &[f64], n: usize, perplexity: f64) -> Result<Vec<f64>> {
    if sq_distances.len() != n * n {
        return Err(Error::DimMismatch {
            expected: n * n,
            found: sq_distances.len(),
        });
    }
    if n < 2 {
        return Err(Error::TooFewRows("calibration needs at least 2 points".into()));
    }
    let target = perplexity.log2();
    if !(perplexity > 1.0) || target > ((n - 1) as f64).log2() + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "perplexity {perplexity} is unreachable with {n} points"
        )));
    }
    if sq_distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::InvalidInput("distances must be finite and nonnegative".into()));
    }
    let mut p = vec![0.0; n * n];
    let mut norm = vec![0.0; n];
    for i in 0..n {
        let row = &sq_distances[i * n..(i + 1) * n];
        let scale = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).sum::<f64>() / (n - 1) as f64;
        if scale == 0.0 {
            log::warn!("point {i} coincides with every other point; adding jitter {DUPLICATE_JITTER:e}");
            // every distance becomes the jitter, which normalizes to 1
            for (j, v) in norm.iter_mut().enumerate() {
                *v = if j == i { 0.0 } else { 1.0 };
            }
        } else {
            for (v, &d) in norm.iter_mut().zip(row) {
                *v = d / scale;
            }
        }
        let out = &mut p[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
        for _ in 0..MAX_BISECTION_STEPS {
            let h = gaussian_row(&norm, i, beta, out);
            let diff = h - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        gaussian_row(&norm, i, beta, out);
    }
    Ok(p)
}

/// `P_ij = (P(j|i) + P(i|j)) / 2n`.
pub fn symmetrize(conditional: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / denom;
        }
    }
    p
}

/// `sum p log(p / q)` in nats, with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::InvalidInput("q vanishes where p is positive".into()));
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// `kl_trace[t]` is KL(P || Q) at the start of iteration `t + 1`,
    /// against the unexaggerated `P`; the final entry is after the last
    /// update.
    pub kl_trace: Vec<f64>,
}

impl TsneResult {
    /// KL at the start of iteration `iter` (1-based); `n_iter + 1` is final.
    pub fn kl_at(&self, iter: usize) -> f64 {
        self.kl_trace[iter - 1]
    }
}

fn student_t(y: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in 0..i {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    z
}

fn kl_from_num(p: &[f64], num: &[f64], z: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &v)| pi * (pi / (v / z).max(Q_FLOOR)).ln())
        .sum()
}

pub fn tsne_embed(x: &[Vec<f64>], config: &TsneConfig) -> Result<TsneResult> {
    let n = x.len();
    config.validate(n)?;
    let dist = pairwise_sq_distances(x);
    let p = symmetrize(&perplexity_calibration(&dist, n, config.perplexity)?, n);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut trace = Vec::with_capacity(config.n_iter + 1);

    for iter in 1..=config.n_iter {
        let z = student_t(&y, &mut num);
        let kl = kl_from_num(&p, &num, z);
        if !kl.is_finite() {
            return Err(Error::Degenerate(format!("non-finite KL at iteration {iter}")));
        }
        trace.push(kl);

        let exaggeration = if iter <= config.exaggeration_iters {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter <= config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        for i in 0..n {
            let mut g = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coef = (exaggeration * p[i * n + j] - w / z) * w;
                g[0] += coef * (y[i][0] - y[j][0]);
                g[1] += coef * (y[i][1] - y[j][1]);
            }
            for d in 0..2 {
                let grad = 4.0 * g[d];
                gains[i][d] = if (grad > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(MIN_GAIN)
                };
                update[i][d] = momentum * update[i][d] - config.learning_rate * gains[i][d] * grad;
            }
        }
        for (yi, u) in y.iter_mut().zip(&update) {
            yi[0] += u[0];
            yi[1] += u[1];
        }
        let mean = y.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0], a[1] + v[1]]);
        for yi in &mut y {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
        if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::Degenerate(format!("non-finite coordinates at iteration {iter}")));
        }
    }
    let z = student_t(&y, &mut num);
    trace.push(kl_from_num(&p, &num, z));
    Ok(TsneResult { coords: y, kl_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistant_triangle_is_uniform() {
        let d = vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let p = perplexity_calibration(&d, 3, 2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.0 } else { 0.5 };
                assert!((p[i * 3 + j] - expected).abs() < 1e-15);
            }
            assert!((entropy_bits(&p[i * 3..i * 3 + 3]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_rows_get_jitter() {
        let x = vec![vec![1.0, 1.0]; 4];
        let p = perplexity_calibration(&pairwise_sq_distances(&x), 4, 2.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_perplexity_rejected() {
        let d = vec![0.0, 1.0, 1.0, 0.0];
        assert!(perplexity_calibration(&d, 2, 3.0).is_err());
        assert!(TsneConfig::new(10.0, 0).validate(20).is_err());
        assert!(TsneConfig::new(1.0, 0).validate(20).is_err());
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_divergence(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        let v = kl_divergence(&[0.75, 0.25], &[0.5, 0.5]).unwrap();
        assert!((v - (0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln())).abs() < 1e-15);
        assert!((v - 0.1308).abs() < 1e-4);
        assert_eq!(kl_divergence(&[0.0, 1.0], &[0.5, 0.5]).unwrap(), 2f64.ln());
        assert!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }
}
