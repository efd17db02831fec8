//! Orthogonalization and spectral-norm estimation.
//!
//! The production routines ([`ortho_newton_schulz`], [`power_iter`]) are cheap
//! approximations; [`exact_orthogonalize`] and [`exact_spectral_norm`] are the
//! SVD-backed oracles they are tested against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{norm2, DenseMatrix};
use crate::svd::svd_oracle;

/// Quintic Newton-Schulz iteration settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonSchulzConfig {
    #[serde(default = "NewtonSchulzConfig::default_steps")]
    pub k_ns: usize,
    #[serde(default = "NewtonSchulzConfig::default_eps")]
    pub eps: f64,
    #[serde(default = "NewtonSchulzConfig::default_a")]
    pub coeff_a: f64,
    #[serde(default = "NewtonSchulzConfig::default_b")]
    pub coeff_b: f64,
    #[serde(default = "NewtonSchulzConfig::default_c")]
    pub coeff_c: f64,
}

impl NewtonSchulzConfig {
    pub const COEFF_A: f64 = 3.4445;
    pub const COEFF_B: f64 = -4.7750;
    pub const COEFF_C: f64 = 2.0315;

    fn default_steps() -> usize {
        5
    }
    fn default_eps() -> f64 {
        1e-7
    }
    fn default_a() -> f64 {
        Self::COEFF_A
    }
    fn default_b() -> f64 {
        Self::COEFF_B
    }
    fn default_c() -> f64 {
        Self::COEFF_C
    }

    pub fn with_steps(k_ns: usize) -> Self {
        Self {
            k_ns,
            ..Self::default()
        }
    }
}

impl Default for NewtonSchulzConfig {
    fn default() -> Self {
        Self {
            k_ns: 5,
            eps: 1e-7,
            coeff_a: Self::COEFF_A,
            coeff_b: Self::COEFF_B,
            coeff_c: Self::COEFF_C,
        }
    }
}

/// Approximates `U·Vᵀ` of `g` with `k_ns` quintic Newton-Schulz steps.
///
/// The input is first scaled by `1 / (‖g‖_F + eps)` so every singular value
/// lies in `[0, 1]`; each step then maps a singular value `x` to
/// `a·x + b·x³ + c·x⁵`. Tall inputs are transposed so the Gram matrix is
/// formed on the short side, and transposed back at the end. A zero input
/// yields exactly zero, and directions with zero singular value stay at zero.
pub fn ortho_newton_schulz(g: &DenseMatrix, cfg: &NewtonSchulzConfig) -> Result<DenseMatrix> {
    if !g.is_finite() {
        return Err(Error::NonFinite("Newton-Schulz input".into()));
    }
    let s = 1.0 / (g.frobenius_norm() + cfg.eps);
    let tall = g.rows() > g.cols();
    let mut x = if tall { g.transpose() } else { g.clone() };
    x.scale_in_place(s);

    for _ in 0..cfg.k_ns {
        // x is wide (rows <= cols): gram = x·xᵀ is the small side, and
        // a·x + (b·gram + c·gram²)·x equals a·x + x·(b·xᵀx + c·(xᵀx)²).
        let gram = x.matmul_t(&x)?;
        let gram2 = gram.matmul(&gram)?;
        let mut poly = gram.scale(cfg.coeff_b);
        poly.axpy(cfg.coeff_c, &gram2)?;
        let mut next = poly.matmul(&x)?;
        next.axpy(cfg.coeff_a, &x)?;
        x = next;
    }

    Ok(if tall { x.transpose() } else { x })
}

/// Relative threshold below which a singular value counts as zero for
/// [`exact_orthogonalize`].
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Exact polar factor `U·Vᵀ` via the SVD oracle. Rejects rank-deficient input.
pub fn exact_orthogonalize(g: &DenseMatrix) -> Result<DenseMatrix> {
    let svd = svd_oracle(g)?;
    let largest = svd.sigma_max();
    let smallest = svd.s.last().copied().unwrap_or(0.0);
    if largest == 0.0 || smallest < RANK_TOLERANCE * largest {
        return Err(Error::RankDeficient { smallest, largest });
    }
    svd.u.matmul_t(&svd.v)
}

/// Largest singular value via the SVD oracle.
pub fn exact_spectral_norm(w: &DenseMatrix) -> Result<f64> {
    Ok(svd_oracle(w)?.sigma_max())
}

/// Output of one [`power_iter`] call.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEstimate {
    /// Rayleigh-quotient estimate of the top singular value; never above the truth.
    pub sigma: f64,
    /// Unit-norm left singular vector estimate, length `rows`.
    pub u: Vec<f64>,
}

/// `k` rounds of alternating power iteration from the warm start `u0`.
///
/// Each round sets `v ← Wᵀu / ‖Wᵀu‖` then `u ← Wv / ‖Wv‖`; the returned
/// estimate is `uᵀWv`. When the iteration collapses (zero matrix, or `u0`
/// orthogonal to the column space) the result is `σ = 0` and `u0` unchanged.
pub fn power_iter(w: &DenseMatrix, u0: &[f64], k: usize) -> Result<SpectralEstimate> {
    if u0.len() != w.rows() {
        return Err(Error::DimensionMismatch {
            op: "power_iter",
            lhs: w.shape(),
            rhs: (u0.len(), 1),
        });
    }
    if !w.is_finite() || u0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("power iteration input".into()));
    }
    let collapsed = || SpectralEstimate {
        sigma: 0.0,
        u: u0.to_vec(),
    };
    let n0 = norm2(u0);
    if n0 == 0.0 {
        return Err(Error::InvalidArgument(
            "power iteration start vector is zero".into(),
        ));
    }
    let mut u: Vec<f64> = u0.iter().map(|x| x / n0).collect();
    let mut v = vec![0.0; w.cols()];
    for _ in 0..k.max(1) {
        v = w.t_matvec(&u)?;
        let nv = norm2(&v);
        if nv == 0.0 {
            return Ok(collapsed());
        }
        v.iter_mut().for_each(|x| *x /= nv);
        u = w.matvec(&v)?;
        let nu = norm2(&u);
        if nu == 0.0 {
            return Ok(collapsed());
        }
        u.iter_mut().for_each(|x| *x /= nu);
    }
    let wv = w.matvec(&v)?;
    let sigma = crate::matrix::dot(&u, &wv);
    if !sigma.is_finite() {
        return Err(Error::NonFinite("power iteration estimate".into()));
    }
    Ok(SpectralEstimate { sigma, u })
}
