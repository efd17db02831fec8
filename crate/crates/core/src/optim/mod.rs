//! Factorized weights and the optimizers that train them.
//!
//! A factorized layer stores `W = A·Bᵀ` with `A: m×r`, `B: n×r`. Updating the
//! factors by `(ΔA, ΔB)` moves the product by the composite update
//! `ΔW = ΔA·Bᵀ + A·ΔBᵀ + ΔA·ΔBᵀ`. If both factor steps have spectral norm at
//! most `ρ < 1`, submultiplicativity gives `‖ΔW‖₂ ≤ ρ·(‖A‖₂ + ‖B‖₂ + 1)`, so
//! choosing `ρ = η / (‖A‖₂ + ‖B‖₂ + 1)` caps `‖ΔW‖₂` at `η`.

mod adamw;
mod spectron;
mod variants;

pub use adamw::{AdamConfig, AdamState};
pub use spectron::{spectron_step, NormEstimator, Orthogonalizer, SpectronState, StepReport};
pub use variants::{DenseOptimizer, DenseRule, FactorizedOptimizer, Hyper, OptimizerVariant};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Inner dimension for a layer with input dimension `n`: `max(1, round(ratio·n))`.
pub fn rank_for(n: usize, rank_ratio: f64) -> usize {
    ((rank_ratio * n as f64).round() as usize).max(1)
}

/// Low-rank weight `W = A·Bᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedWeight {
    /// m × r
    pub a: DenseMatrix,
    /// n × r
    pub b: DenseMatrix,
    pub rank_ratio: f64,
}

impl FactorizedWeight {
    pub fn new(a: DenseMatrix, b: DenseMatrix, rank_ratio: f64) -> Result<Self> {
        if a.cols() != b.cols() {
            return Err(Error::DimensionMismatch {
                op: "FactorizedWeight::new",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        if !(rank_ratio > 0.0 && rank_ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rank ratio must lie in (0, 1], got {rank_ratio}"
            )));
        }
        Ok(Self { a, b, rank_ratio })
    }

    /// Output dimension m.
    pub fn out_dim(&self) -> usize {
        self.a.rows()
    }

    /// Input dimension n.
    pub fn in_dim(&self) -> usize {
        self.b.rows()
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// Dense `A·Bᵀ` (m × n).
    pub fn materialize(&self) -> DenseMatrix {
        self.a.matmul_t(&self.b).expect("factor ranks agree")
    }

    pub fn param_count(&self) -> usize {
        self.rank() * (self.out_dim() + self.in_dim())
    }
}

/// Adaptive per-factor constraint radius `η / (σ_A + σ_B + 1)`.
///
/// Logs a warning when the radius reaches 1, where the `ρ² ≤ ρ` step of the
/// update bound no longer holds.
pub fn rho_bound(sigma_a: f64, sigma_b: f64, eta: f64) -> f64 {
    let rho = eta / (sigma_a + sigma_b + 1.0);
    if rho >= 1.0 {
        log::warn!("constraint radius {rho} >= 1; the composite update bound is loose");
    }
    rho
}

/// `ΔW = dA·Bᵀ + A·dBᵀ + dA·dBᵀ`.
pub fn composite_update(
    a: &DenseMatrix,
    b: &DenseMatrix,
    da: &DenseMatrix,
    db: &DenseMatrix,
) -> Result<DenseMatrix> {
    if a.shape() != da.shape() {
        return Err(Error::DimensionMismatch {
            op: "composite_update (A vs dA)",
            lhs: a.shape(),
            rhs: da.shape(),
        });
    }
    if b.shape() != db.shape() {
        return Err(Error::DimensionMismatch {
            op: "composite_update (B vs dB)",
            lhs: b.shape(),
            rhs: db.shape(),
        });
    }
    let mut dw = da.matmul_t(b)?;
    dw.axpy(1.0, &a.matmul_t(db)?)?;
    dw.axpy(1.0, &da.matmul_t(db)?)?;
    Ok(dw)
}

/// Decoupled weight decay: `factor · (1 − η·λ)`.
pub fn apply_weight_decay(factor: &DenseMatrix, lambda_wd: f64, eta: f64) -> DenseMatrix {
    if lambda_wd == 0.0 {
        return factor.clone();
    }
    factor.scale(1.0 - eta * lambda_wd)
}
