//! Thin singular value decomposition by one-sided Jacobi rotations.
//!
//! This is the exact oracle the rest of the crate is checked against: it is
//! slow (cubic per sweep) but accurate to working precision, and its output is
//! certified by reconstruction. Nothing on the training hot path calls it
//! except spectral initialization and telemetry.

use crate::error::{Error, Result};
use crate::matrix::{dot, DenseMatrix};

/// Largest `min(rows, cols)` accepted by the oracle.
pub const MAX_ORACLE_DIM: usize = 2048;

const MAX_SWEEPS: usize = 80;

/// Thin SVD `X = U · diag(S) · Vᵀ` with `k = min(rows, cols)`.
#[derive(Clone, Debug)]
pub struct Svd {
    /// rows × k, orthonormal columns.
    pub u: DenseMatrix,
    /// Non-negative, descending, length k.
    pub s: Vec<f64>,
    /// cols × k, orthonormal columns.
    pub v: DenseMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let scaled = DenseMatrix::from_fn(self.u.rows(), self.s.len(), |r, c| {
            self.u.get(r, c) * self.s[c]
        });
        scaled.matmul_t(&self.v).expect("conformable SVD factors")
    }

    pub fn sigma_max(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }
}

/// Computes the thin SVD of `x`.
pub fn svd_oracle(x: &DenseMatrix) -> Result<Svd> {
    if x.rows().min(x.cols()) > MAX_ORACLE_DIM {
        return Err(Error::InvalidArgument(format!(
            "svd oracle limited to min dimension {MAX_ORACLE_DIM}, got {:?}",
            x.shape()
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    if x.rows() < x.cols() {
        let t = jacobi_tall(&x.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    jacobi_tall(x)
}

/// One-sided Jacobi for `rows >= cols`.
fn jacobi_tall(x: &DenseMatrix) -> Result<Svd> {
    let (m, n) = x.shape();
    // Column-major working copies.
    let mut a: Vec<Vec<f64>> = (0..n).map(|c| x.col(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();

    let tol = f64::EPSILON * (m as f64).sqrt();
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            algorithm: "one-sided Jacobi SVD",
            iterations: MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma_max = norms[order[0]];
    let negligible = sigma_max * f64::EPSILON * (m.max(n) as f64);

    let mut s = Vec::with_capacity(n);
    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    for &j in &order {
        let sigma = norms[j];
        if sigma > negligible && sigma > 0.0 {
            s.push(sigma);
            u_cols.push(Some(a[j].iter().map(|x| x / sigma).collect()));
        } else {
            s.push(0.0);
            u_cols.push(None);
        }
        v_cols.push(v[j].clone());
    }
    let u_cols = complete_basis(m, u_cols);

    Ok(Svd {
        u: DenseMatrix::from_fn(m, n, |r, c| u_cols[c][r]),
        s,
        v: DenseMatrix::from_fn(n, n, |r, c| v_cols[c][r]),
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills missing columns (zero singular values) with an orthonormal completion.
fn complete_basis(m: usize, cols: Vec<Option<Vec<f64>>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut candidate = 0usize;
    cols.into_iter()
        .map(|col| match col {
            Some(c) => c,
            None => loop {
                let mut e = vec![0.0; m];
                e[candidate % m] = 1.0;
                candidate += 1;
                for _ in 0..2 {
                    for b in &basis {
                        let d = dot(&e, b);
                        for (x, y) in e.iter_mut().zip(b) {
                            *x -= d * y;
                        }
                    }
                }
                let norm = dot(&e, &e).sqrt();
                if norm > 1e-6 {
                    e.iter_mut().for_each(|x| *x /= norm);
                    basis.push(e.clone());
                    break e;
                }
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn orthonormality_defect(q: &DenseMatrix) -> f64 {
        let g = q.t_matmul(q).unwrap();
        g.sub(&DenseMatrix::identity(q.cols()))
            .unwrap()
            .frobenius_norm()
    }

    fn check(x: &DenseMatrix) -> Svd {
        let svd = svd_oracle(x).unwrap();
        assert!(orthonormality_defect(&svd.u) <= 1e-9);
        assert!(orthonormality_defect(&svd.v) <= 1e-9);
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        assert!(svd.s.iter().all(|&s| s >= 0.0));
        let resid = svd.reconstruct().sub(x).unwrap().frobenius_norm();
        assert!(resid <= 1e-8 * x.frobenius_norm().max(f64::MIN_POSITIVE));
        svd
    }

    #[test]
    fn diagonal_input() {
        let svd = check(&DenseMatrix::diag(&[3.0, 1.0]));
        assert_eq!(svd.s, vec![3.0, 1.0]);
        let svd = check(&DenseMatrix::diag(&[1.0, 3.0]));
        assert_eq!(svd.s, vec![3.0, 1.0]);
    }

    #[test]
    fn zero_matrix_has_zero_spectrum_and_orthonormal_factors() {
        let svd = check(&DenseMatrix::zeros(4, 3));
        assert!(svd.s.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn random_shapes_reconstruct() {
        let mut rng = Rng::new(9);
        for &(m, n) in &[(8, 5), (5, 8), (1, 6), (6, 1), (12, 12), (30, 7)] {
            let x = rng.gaussian_matrix(m, n, 1.0);
            let svd = check(&x);
            let energy: f64 = svd.s.iter().map(|s| s * s).sum();
            let fro2 = x.frobenius_norm().powi(2);
            assert!((energy - fro2).abs() <= 1e-9 * fro2);
        }
    }

    #[test]
    fn rank_deficient_input_completes_basis() {
        let mut rng = Rng::new(4);
        let a = rng.gaussian_matrix(7, 2, 1.0);
        let b = rng.gaussian_matrix(5, 2, 1.0);
        let x = a.matmul_t(&b).unwrap();
        let svd = check(&x);
        assert!(svd.s[2] < 1e-12 * svd.s[0]);
    }
}
