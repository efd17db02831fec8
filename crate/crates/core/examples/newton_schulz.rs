//! Orthogonalize ill-conditioned matrices with five Newton-Schulz steps and
//! compare the resulting singular values with the exact polar factor.

use spectron::spectral::{exact_orthogonalize, ortho_newton_schulz, NewtonSchulzConfig};
use spectron::svd::svd_oracle;
use spectron::{DenseMatrix, Rng};

fn conditioned(rows: usize, cols: usize, kappa: f64, rng: &mut Rng) -> DenseMatrix {
    let k = rows.min(cols);
    let u = rng.orthonormal_columns(rows, k);
    let v = rng.orthonormal_columns(cols, k);
    let s: Vec<f64> = (0..k).map(|i| kappa.powf(-(i as f64) / (k - 1) as f64)).collect();
    let us = DenseMatrix::from_fn(rows, k, |r, c| u.get(r, c) * s[c]);
    us.matmul_t(&v).expect("shapes agree")
}

fn main() -> spectron::Result<()> {
    let mut rng = Rng::new(7);
    let cfg = NewtonSchulzConfig::default();
    println!("{:>10} {:>8} {:>10} {:>10} {:>12}", "shape", "kappa", "min sv", "max sv", "dist exact");
    for &(m, n) in &[(16, 16), (32, 96), (128, 48)] {
        for &kappa in &[1.0f64, 10.0, 100.0, 1000.0] {
            let g = conditioned(m, n, kappa, &mut rng);
            let o = ortho_newton_schulz(&g, &cfg)?;
            let s = svd_oracle(&o)?.s;
            let dist = o.sub(&exact_orthogonalize(&g)?)?.frobenius_norm();
            println!(
                "{:>10} {:>8} {:>10.4} {:>10.4} {:>12.4}",
                format!("{m}x{n}"),
                kappa,
                s.last().unwrap(),
                s[0],
                dist
            );
        }
    }
    Ok(())
}
