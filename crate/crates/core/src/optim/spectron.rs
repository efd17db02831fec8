use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::rng::Rng;
use crate::spectral::{
    exact_orthogonalize, exact_spectral_norm, ortho_newton_schulz, power_iter, NewtonSchulzConfig,
};

use super::{apply_weight_decay, rho_bound, FactorizedWeight};

/// How momentum is orthogonalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Orthogonalizer {
    #[default]
    NewtonSchulz,
    /// SVD polar factor; test-only idealization.
    Exact,
}

/// How factor spectral norms are measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormEstimator {
    /// Warm-started power iteration.
    #[default]
    PowerIteration,
    /// SVD oracle; test-only idealization.
    Exact,
}

/// Per-layer optimizer state.
#[derive(Clone, Debug)]
pub struct SpectronState {
    pub layer: String,
    /// Momentum for A (m × r).
    pub m_a: DenseMatrix,
    /// Momentum for B (n × r).
    pub m_b: DenseMatrix,
    /// Warm-start left singular vector of A (length m).
    pub u_a: Vec<f64>,
    /// Warm-start left singular vector of B (length n).
    pub u_b: Vec<f64>,
    /// Steps taken so far.
    pub t: u64,
    pub beta: f64,
    pub eta: f64,
    pub weight_decay: f64,
    pub cfg: NewtonSchulzConfig,
    pub k_power: usize,
    pub orthogonalizer: Orthogonalizer,
    pub norm_estimator: NormEstimator,
    /// When false the radius denominator is the constant 1 (orthogonalized
    /// momentum without renormalization).
    pub renormalize: bool,
}

impl SpectronState {
    /// Zero momentum and random unit warm-start vectors drawn from `rng`.
    pub fn new(layer: impl Into<String>, w: &FactorizedWeight, eta: f64, rng: &mut Rng) -> Self {
        Self {
            layer: layer.into(),
            m_a: DenseMatrix::zeros(w.a.rows(), w.a.cols()),
            m_b: DenseMatrix::zeros(w.b.rows(), w.b.cols()),
            u_a: rng.unit_vector(w.a.rows()),
            u_b: rng.unit_vector(w.b.rows()),
            t: 0,
            beta: 0.95,
            eta,
            weight_decay: 0.0,
            cfg: NewtonSchulzConfig::default(),
            k_power: 1,
            orthogonalizer: Orthogonalizer::default(),
            norm_estimator: NormEstimator::default(),
            renormalize: true,
        }
    }

    pub(crate) fn orthogonalize(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        match self.orthogonalizer {
            Orthogonalizer::NewtonSchulz => ortho_newton_schulz(m, &self.cfg),
            Orthogonalizer::Exact => {
                if m.is_zero() {
                    Ok(m.clone())
                } else {
                    exact_orthogonalize(m)
                }
            }
        }
    }

    /// Refreshes the factor norm estimates, updating the warm-start vectors.
    pub(crate) fn factor_norms(&mut self, w: &FactorizedWeight) -> Result<(f64, f64)> {
        match self.norm_estimator {
            NormEstimator::PowerIteration => {
                let ea = power_iter(&w.a, &self.u_a, self.k_power)?;
                let eb = power_iter(&w.b, &self.u_b, self.k_power)?;
                self.u_a = ea.u;
                self.u_b = eb.u;
                Ok((ea.sigma, eb.sigma))
            }
            NormEstimator::Exact => Ok((exact_spectral_norm(&w.a)?, exact_spectral_norm(&w.b)?)),
        }
    }

    pub(crate) fn check_gradients(&self, w: &FactorizedWeight, ga: &DenseMatrix, gb: &DenseMatrix) -> Result<()> {
        if ga.shape() != w.a.shape() {
            return Err(Error::DimensionMismatch {
                op: "gradient for A",
                lhs: w.a.shape(),
                rhs: ga.shape(),
            });
        }
        if gb.shape() != w.b.shape() {
            return Err(Error::DimensionMismatch {
                op: "gradient for B",
                lhs: w.b.shape(),
                rhs: gb.shape(),
            });
        }
        if !ga.is_finite() || !gb.is_finite() {
            return Err(Error::NonFinite(format!("gradient of layer {}", self.layer)));
        }
        Ok(())
    }
}

/// What a single factor step did.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub rho: f64,
    /// Amount subtracted from A.
    pub delta_a: DenseMatrix,
    /// Amount subtracted from B.
    pub delta_b: DenseMatrix,
}

/// One optimizer step on a factorized weight.
///
/// 1. `M ← β·M + (1 − β)·G` for both factors.
/// 2. `O ← Ortho(M)`.
/// 3. `σ_A, σ_B` estimated on the current (pre-update) factors, warm-starting
///    from the stored vectors.
/// 4. `Δ = η / (σ_A + σ_B + 1) · O`, subtracted from each factor (after
///    decoupled weight decay when enabled).
pub fn spectron_step(
    w: &mut FactorizedWeight,
    ga: &DenseMatrix,
    gb: &DenseMatrix,
    s: &mut SpectronState,
) -> Result<StepReport> {
    s.check_gradients(w, ga, gb)?;

    s.m_a.scale_in_place(s.beta);
    s.m_a.axpy(1.0 - s.beta, ga)?;
    s.m_b.scale_in_place(s.beta);
    s.m_b.axpy(1.0 - s.beta, gb)?;

    let o_a = s.orthogonalize(&s.m_a)?;
    let o_b = s.orthogonalize(&s.m_b)?;

    let (sigma_a, sigma_b) = s.factor_norms(w)?;
    let rho = if s.renormalize {
        rho_bound(sigma_a, sigma_b, s.eta)
    } else {
        s.eta / 1.0
    };

    let delta_a = o_a.scale(rho);
    let delta_b = o_b.scale(rho);

    if s.weight_decay != 0.0 {
        w.a = apply_weight_decay(&w.a, s.weight_decay, s.eta);
        w.b = apply_weight_decay(&w.b, s.weight_decay, s.eta);
    }
    w.a.axpy(-1.0, &delta_a)?;
    w.b.axpy(-1.0, &delta_b)?;
    s.t += 1;

    Ok(StepReport {
        sigma_a,
        sigma_b,
        rho,
        delta_a,
        delta_b,
    })
}
