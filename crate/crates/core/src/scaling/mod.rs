//! Scaling-law toolkit: IsoFLOP parabolas, power-law exponents, a parametric
//! Huber fit of `L(N, D) = E + A/N^α + B/D^β`, and the allocations derived
//! from it.

mod io;
mod isoflop;
mod parametric;

pub use io::{read_points_csv, FitDocument, IsoflopReport, ParametricReport, PointResidual};
pub use isoflop::{group_by_budget, isoflop_fit, IsoflopCurve};
pub use parametric::{
    huber, local_fit, parametric_fit, start_grid, LocalFit, ParamVector, ScalingFit, FIT_BOX,
    HUBER_DELTA,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training run: parameters `N`, tokens `D`, compute `C = 6ND`, final loss `L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub n_params: f64,
    pub tokens: f64,
    pub flops: f64,
    pub loss: f64,
}

impl RunPoint {
    pub fn new(n_params: f64, tokens: f64, loss: f64) -> Result<Self> {
        for (name, v) in [("n_params", n_params), ("tokens", tokens), ("loss", loss)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(Self {
            n_params,
            tokens,
            flops: 6.0 * n_params * tokens,
            loss,
        })
    }

    /// The run at budget `flops` with `n_params` parameters.
    pub fn at_budget(flops: f64, n_params: f64, loss: f64) -> Result<Self> {
        Self::new(n_params, flops / (6.0 * n_params), loss)
    }
}

/// `value ≈ prefactor · C^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub exponent: f64,
    pub prefactor: f64,
}

/// Ordinary least squares of `ln value` on `ln C`.
pub fn powerlaw_fit(pairs: &[(f64, f64)]) -> Result<PowerLaw> {
    if pairs.len() < 2 {
        return Err(Error::Fit(format!("power law needs at least 2 points, got {}", pairs.len())));
    }
    if let Some((c, v)) = pairs.iter().find(|(c, v)| !(*c > 0.0 && *v > 0.0 && c.is_finite() && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("power law inputs must be positive, got ({c}, {v})")));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("power law needs at least 2 distinct budgets".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(PowerLaw {
        exponent: slope,
        prefactor: (my - slope * mx).exp(),
    })
}

/// Exponents `(a_N, a_D) = (β/(α+β), α/(α+β))` of the compute-optimal
/// allocation `N ∝ C^a_N`, `D ∝ C^a_D`. The pair sums to exactly 1.
pub fn compute_optimal(alpha: f64, beta: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "exponents must be positive, got alpha={alpha}, beta={beta}"
        )));
    }
    let a_n = beta / (alpha + beta);
    Ok((a_n, 1.0 - a_n))
}

/// Difference between the compute-optimal size exponents of the dense and
/// factorized families.
pub const SAVINGS_EXPONENT: f64 = 0.011;

/// Estimated inference cost reduction, in percent: `(1 − C^−0.011)·100`.
pub fn inference_savings(flops: f64) -> Result<f64> {
    if !(flops >= 1.0 && flops.is_finite()) {
        return Err(Error::InvalidArgument(format!("flops must be at least 1, got {flops}")));
    }
    Ok((1.0 - flops.powf(-SAVINGS_EXPONENT)) * 100.0)
}
