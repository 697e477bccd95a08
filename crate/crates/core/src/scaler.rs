use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension z-scoring fitted on training rows. Population std,
/// floored at `STD_FLOOR` so constant dimensions map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[&[f64]]) -> Result<Scaler> {
        let first = rows.first().ok_or(Error::Empty("scaler input"))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Scaler { mean, std })
    }

    pub fn identity(dim: usize) -> Scaler {
        Scaler {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}
