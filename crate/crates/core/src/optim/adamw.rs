use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::DenseMatrix;

/// Adaptive-moment hyperparameters (β₁ 0.9, β₂ 0.95 by default).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers for one matrix.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: DenseMatrix,
    v: DenseMatrix,
    t: i32,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: DenseMatrix::zeros(rows, cols),
            v: DenseMatrix::zeros(rows, cols),
            t: 0,
        }
    }

    /// Bias-corrected step `lr · m̂ / (√v̂ + eps)`; the caller subtracts it.
    pub fn delta(&mut self, g: &DenseMatrix, lr: f64, cfg: &AdamConfig) -> Result<DenseMatrix> {
        self.t += 1;
        self.m.scale_in_place(cfg.beta1);
        self.m.axpy(1.0 - cfg.beta1, g)?;
        let g2 = g.hadamard(g)?;
        self.v.scale_in_place(cfg.beta2);
        self.v.axpy(1.0 - cfg.beta2, &g2)?;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let data = self
            .m
            .data()
            .iter()
            .zip(self.v.data())
            .map(|(&m, &v)| lr * (m / c1) / ((v / c2).sqrt() + cfg.eps))
            .collect();
        Ok(DenseMatrix::from_raw(g.rows(), g.cols(), data))
    }
}
