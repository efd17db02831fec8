//! Spectral initialization of factorized weights.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::optim::FactorizedWeight;
use crate::rng::Rng;
use crate::svd::svd_oracle;

/// Draws a dense `m × n` Gaussian matrix with variance `1/n` and factors its
/// best rank-`r` approximation as `A = U_r·√Σ_r`, `B = V_r·√Σ_r`.
pub fn spectral_init(
    m: usize,
    n: usize,
    r: usize,
    rank_ratio: f64,
    rng: &mut Rng,
) -> Result<FactorizedWeight> {
    let w0 = rng.gaussian_matrix(m, n, 1.0 / (n as f64).sqrt());
    factorize_truncated(&w0, r, rank_ratio)
}

/// Balanced rank-`r` factors of `w` from its truncated SVD.
pub fn factorize_truncated(w: &DenseMatrix, r: usize, rank_ratio: f64) -> Result<FactorizedWeight> {
    let (m, n) = w.shape();
    if r == 0 || r > m.min(n) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} must lie in 1..={} for a {m}×{n} weight",
            m.min(n)
        )));
    }
    let svd = svd_oracle(w)?;
    let roots: Vec<f64> = svd.s[..r].iter().map(|s| s.sqrt()).collect();
    let a = DenseMatrix::from_fn(m, r, |i, j| svd.u.get(i, j) * roots[j]);
    let b = DenseMatrix::from_fn(n, r, |i, j| svd.v.get(i, j) * roots[j]);
    FactorizedWeight::new(a, b, rank_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rank_reconstructs_the_draw() {
        let mut rng = Rng::new(1);
        let mut twin = rng.clone();
        let w = spectral_init(9, 6, 6, 1.0, &mut rng).unwrap();
        let w0 = twin.gaussian_matrix(9, 6, 1.0 / 6f64.sqrt());
        assert!(w.materialize().sub(&w0).unwrap().max_abs() <= 1e-8);
    }

    #[test]
    fn factors_are_balanced() {
        let mut rng = Rng::new(2);
        let mut twin = rng.clone();
        let w = spectral_init(12, 10, 4, 0.4, &mut rng).unwrap();
        let s = svd_oracle(&twin.gaussian_matrix(12, 10, 1.0 / 10f64.sqrt())).unwrap().s;
        let top: f64 = s[..4].iter().sum();
        let fa = w.a.frobenius_norm().powi(2);
        let fb = w.b.frobenius_norm().powi(2);
        assert!((fa - top).abs() < 1e-10 && (fb - top).abs() < 1e-10);
    }

    #[test]
    fn truncation_beats_random_competitors() {
        let mut rng = Rng::new(3);
        let mut twin = rng.clone();
        let w = spectral_init(10, 8, 3, 0.375, &mut rng).unwrap();
        let w0 = twin.gaussian_matrix(10, 8, 1.0 / 8f64.sqrt());
        let best = w0.sub(&w.materialize()).unwrap().frobenius_norm();
        let mut comp = Rng::new(99);
        for _ in 0..20 {
            let x = comp.gaussian_matrix(10, 3, 0.5);
            let y = comp.gaussian_matrix(8, 3, 0.5);
            let err = w0.sub(&x.matmul_t(&y).unwrap()).unwrap().frobenius_norm();
            assert!(best <= err);
        }
    }

    #[test]
    fn rank_above_min_dimension_is_rejected() {
        assert!(spectral_init(4, 6, 5, 1.0, &mut Rng::new(4)).is_err());
        assert!(spectral_init(4, 6, 0, 1.0, &mut Rng::new(4)).is_err());
    }
}
