use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::rng::Rng;
use crate::spectral::{exact_spectral_norm, power_iter, NewtonSchulzConfig};

use super::adamw::{AdamConfig, AdamState};
use super::spectron::{spectron_step, NormEstimator, SpectronState, StepReport};
use super::{apply_weight_decay, rho_bound, FactorizedWeight};

/// Update rule applied to factorized layers.
///
/// The first four form a 2×2 factorial over orthogonalization and spectral
/// renormalization; `AdaptiveMoments` is the decoupled-weight-decay Adam
/// baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerVariant {
    Spectron,
    OrthoOnly,
    SpecNormOnly,
    NaiveMomentum,
    AdaptiveMoments,
}

impl OptimizerVariant {
    /// The factorial grid, best-expected first.
    pub const GRID: [OptimizerVariant; 4] = [
        OptimizerVariant::Spectron,
        OptimizerVariant::OrthoOnly,
        OptimizerVariant::SpecNormOnly,
        OptimizerVariant::NaiveMomentum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Spectron => "spectron",
            Self::OrthoOnly => "ortho_only",
            Self::SpecNormOnly => "spec_norm_only",
            Self::NaiveMomentum => "naive_momentum",
            Self::AdaptiveMoments => "adaptive_moments",
        }
    }

    pub fn orthogonalizes(self) -> bool {
        matches!(self, Self::Spectron | Self::OrthoOnly)
    }

    pub fn renormalizes(self) -> bool {
        matches!(self, Self::Spectron | Self::SpecNormOnly)
    }

    /// Rule used for dense hidden matrices under this variant.
    pub fn dense_rule(self) -> DenseRule {
        match self {
            Self::Spectron | Self::OrthoOnly => DenseRule::OrthoMomentum,
            Self::SpecNormOnly => DenseRule::SpecNormMomentum,
            Self::NaiveMomentum => DenseRule::Momentum,
            Self::AdaptiveMoments => DenseRule::AdamW,
        }
    }
}

impl fmt::Display for OptimizerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Self::Spectron,
            Self::OrthoOnly,
            Self::SpecNormOnly,
            Self::NaiveMomentum,
            Self::AdaptiveMoments,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown optimizer variant '{s}'")))
    }
}

/// Hyperparameters shared by every parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub beta: f64,
    pub ns: NewtonSchulzConfig,
    pub k_power: usize,
    pub weight_decay: f64,
    pub adam: AdamConfig,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            beta: 0.95,
            ns: NewtonSchulzConfig::default(),
            k_power: 1,
            weight_decay: 0.0,
            adam: AdamConfig::default(),
        }
    }
}

/// Optimizer for one factorized layer under a chosen variant.
#[derive(Clone, Debug)]
pub struct FactorizedOptimizer {
    variant: OptimizerVariant,
    core: SpectronState,
    /// Warm starts for the momentum norm estimate (`SpecNormOnly`).
    momentum_u: (Vec<f64>, Vec<f64>),
    adam: Option<(AdamState, AdamState)>,
}

impl FactorizedOptimizer {
    pub fn new(
        variant: OptimizerVariant,
        layer: impl Into<String>,
        w: &FactorizedWeight,
        hyper: &Hyper,
        rng: &mut Rng,
    ) -> Self {
        let mut core = SpectronState::new(layer, w, 0.0, rng);
        core.beta = hyper.beta;
        core.cfg = hyper.ns;
        core.k_power = hyper.k_power;
        core.weight_decay = hyper.weight_decay;
        let momentum_u = if variant == OptimizerVariant::SpecNormOnly {
            (rng.unit_vector(w.a.rows()), rng.unit_vector(w.b.rows()))
        } else {
            (Vec::new(), Vec::new())
        };
        let adam = (variant == OptimizerVariant::AdaptiveMoments).then(|| {
            (
                AdamState::new(w.a.rows(), w.a.cols()),
                AdamState::new(w.b.rows(), w.b.cols()),
            )
        });
        Self {
            variant,
            core,
            momentum_u,
            adam,
        }
    }

    pub fn variant(&self) -> OptimizerVariant {
        self.variant
    }

    pub fn state(&self) -> &SpectronState {
        &self.core
    }

    pub fn state_mut(&mut self) -> &mut SpectronState {
        &mut self.core
    }

    /// Takes one step at learning rate `lr`.
    pub fn step(
        &mut self,
        w: &mut FactorizedWeight,
        ga: &DenseMatrix,
        gb: &DenseMatrix,
        lr: f64,
        adam_cfg: &AdamConfig,
    ) -> Result<StepReport> {
        let s = &mut self.core;
        s.eta = lr;
        match self.variant {
            OptimizerVariant::Spectron => {
                s.renormalize = true;
                spectron_step(w, ga, gb, s)
            }
            OptimizerVariant::OrthoOnly => {
                s.check_gradients(w, ga, gb)?;
                ema(&mut s.m_a, ga, s.beta)?;
                ema(&mut s.m_b, gb, s.beta)?;
                let delta_a = s.orthogonalize(&s.m_a)?.scale(lr);
                let delta_b = s.orthogonalize(&s.m_b)?.scale(lr);
                finish(w, s, delta_a, delta_b, 0.0, 0.0, lr)
            }
            OptimizerVariant::SpecNormOnly => {
                s.check_gradients(w, ga, gb)?;
                ema(&mut s.m_a, ga, s.beta)?;
                ema(&mut s.m_b, gb, s.beta)?;
                let na = unit_spectral(&s.m_a, &mut self.momentum_u.0, s)?;
                let nb = unit_spectral(&s.m_b, &mut self.momentum_u.1, s)?;
                let (sigma_a, sigma_b) = s.factor_norms(w)?;
                let rho = rho_bound(sigma_a, sigma_b, lr);
                finish(w, s, na.scale(rho), nb.scale(rho), sigma_a, sigma_b, rho)
            }
            OptimizerVariant::NaiveMomentum => {
                s.check_gradients(w, ga, gb)?;
                heavy_ball(&mut s.m_a, ga, s.beta)?;
                heavy_ball(&mut s.m_b, gb, s.beta)?;
                let (da, db) = (s.m_a.scale(lr), s.m_b.scale(lr));
                finish(w, s, da, db, 0.0, 0.0, lr)
            }
            OptimizerVariant::AdaptiveMoments => {
                s.check_gradients(w, ga, gb)?;
                let (st_a, st_b) = self.adam.as_mut().expect("adam state for adaptive variant");
                let da = st_a.delta(ga, lr, adam_cfg)?;
                let db = st_b.delta(gb, lr, adam_cfg)?;
                finish(w, s, da, db, 0.0, 0.0, lr)
            }
        }
    }
}

/// `M ← β·M + (1 − β)·G`
fn ema(m: &mut DenseMatrix, g: &DenseMatrix, beta: f64) -> Result<()> {
    m.scale_in_place(beta);
    m.axpy(1.0 - beta, g)
}

/// `M ← β·M + G` (undamped SGD momentum)
fn heavy_ball(m: &mut DenseMatrix, g: &DenseMatrix, beta: f64) -> Result<()> {
    m.scale_in_place(beta);
    m.axpy(1.0, g)
}

/// `M / ‖M‖₂`, or zero when `M` is zero.
fn unit_spectral(m: &DenseMatrix, u: &mut Vec<f64>, s: &SpectronState) -> Result<DenseMatrix> {
    let sigma = match s.norm_estimator {
        NormEstimator::PowerIteration => {
            let est = power_iter(m, u, s.k_power)?;
            *u = est.u;
            est.sigma
        }
        NormEstimator::Exact => exact_spectral_norm(m)?,
    };
    Ok(if sigma > 0.0 {
        m.scale(1.0 / sigma)
    } else {
        DenseMatrix::zeros(m.rows(), m.cols())
    })
}

fn finish(
    w: &mut FactorizedWeight,
    s: &mut SpectronState,
    delta_a: DenseMatrix,
    delta_b: DenseMatrix,
    sigma_a: f64,
    sigma_b: f64,
    rho: f64,
) -> Result<StepReport> {
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

/// Update rule for a dense (unfactorized) matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenseRule {
    /// `η · Ortho(M)` with EMA momentum.
    OrthoMomentum,
    /// `η / (‖W‖₂ + 1) · M / ‖M‖₂` with EMA momentum.
    SpecNormMomentum,
    /// `η · M` with undamped momentum.
    Momentum,
    AdamW,
}

/// Optimizer state for one dense matrix.
#[derive(Clone, Debug)]
pub struct DenseOptimizer {
    rule: DenseRule,
    name: String,
    momentum: DenseMatrix,
    u_w: Vec<f64>,
    u_m: Vec<f64>,
    adam: AdamState,
}

impl DenseOptimizer {
    pub fn new(rule: DenseRule, name: impl Into<String>, w: &DenseMatrix, rng: &mut Rng) -> Self {
        Self {
            rule,
            name: name.into(),
            momentum: DenseMatrix::zeros(w.rows(), w.cols()),
            u_w: rng.unit_vector(w.rows()),
            u_m: rng.unit_vector(w.rows()),
            adam: AdamState::new(w.rows(), w.cols()),
        }
    }

    pub fn rule(&self) -> DenseRule {
        self.rule
    }

    /// Updates `w` in place and returns the amount subtracted.
    pub fn step(
        &mut self,
        w: &mut DenseMatrix,
        g: &DenseMatrix,
        lr: f64,
        hyper: &Hyper,
    ) -> Result<DenseMatrix> {
        if g.shape() != w.shape() {
            return Err(Error::DimensionMismatch {
                op: "dense gradient",
                lhs: w.shape(),
                rhs: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", self.name)));
        }
        let delta = match self.rule {
            DenseRule::OrthoMomentum => {
                ema(&mut self.momentum, g, hyper.beta)?;
                crate::spectral::ortho_newton_schulz(&self.momentum, &hyper.ns)?.scale(lr)
            }
            DenseRule::SpecNormMomentum => {
                ema(&mut self.momentum, g, hyper.beta)?;
                let em = power_iter(&self.momentum, &self.u_m, hyper.k_power)?;
                self.u_m = em.u;
                let ew = power_iter(w, &self.u_w, hyper.k_power)?;
                self.u_w = ew.u;
                if em.sigma > 0.0 {
                    self.momentum.scale(lr / ((ew.sigma + 1.0) * em.sigma))
                } else {
                    DenseMatrix::zeros(w.rows(), w.cols())
                }
            }
            DenseRule::Momentum => {
                heavy_ball(&mut self.momentum, g, hyper.beta)?;
                self.momentum.scale(lr)
            }
            DenseRule::AdamW => self.adam.delta(g, lr, &hyper.adam)?,
        };
        if hyper.weight_decay != 0.0 {
            *w = apply_weight_decay(w, hyper.weight_decay, lr);
        }
        w.axpy(-1.0, &delta)?;
        Ok(delta)
    }
}
