//! Self-guided layer: a dense branch that anneals into a factorized one.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::optim::FactorizedWeight;
use crate::rng::Rng;

/// Blend weight of the dense branch at `step`: cosine decay from 1 to 0 over
/// the first `guided_fraction` of `total_steps`, then 0.
pub fn guidance_alpha(step: usize, total_steps: usize, guided_fraction: f64) -> f64 {
    let horizon = guided_fraction * total_steps as f64;
    if horizon <= 0.0 || step as f64 >= horizon {
        return 0.0;
    }
    0.5 * (1.0 + (std::f64::consts::PI * step as f64 / horizon).cos())
}

/// Computes `α·Wx + (1 − α)·A(Bᵀx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfGuidedLinear {
    /// m × n
    pub dense: DenseMatrix,
    pub factors: FactorizedWeight,
    pub guided_fraction: f64,
    /// Pick one branch per forward instead of blending deterministically.
    pub stochastic: bool,
}

impl SelfGuidedLinear {
    /// Starts with the dense weight equal to the factor product.
    pub fn new(factors: FactorizedWeight, guided_fraction: f64, stochastic: bool) -> Self {
        Self {
            dense: factors.materialize(),
            factors,
            guided_fraction,
            stochastic,
        }
    }

    pub fn alpha(&self, step: usize, total_steps: usize) -> f64 {
        guidance_alpha(step, total_steps, self.guided_fraction)
    }

    /// Applies the layer to row-stacked inputs `x` (tokens × n).
    ///
    /// In stochastic mode one `p ~ U(0, 1)` is drawn per call; the blended
    /// output is used when `p < α`, otherwise the factorized branch alone.
    pub fn forward(&self, x: &DenseMatrix, alpha: f64, rng: &mut Rng) -> Result<DenseMatrix> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let low_rank = x.matmul(&self.factors.b)?.matmul_t(&self.factors.a)?;
        let blend = if self.stochastic { rng.uniform() < alpha } else { true };
        if !blend || alpha == 0.0 {
            return Ok(low_rank);
        }
        let mut out = x.matmul_t(&self.dense)?.scale(alpha);
        out.axpy(1.0 - alpha, &low_rank)?;
        Ok(out)
    }
}
