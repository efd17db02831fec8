//! Initialize factors from the truncated SVD of a Gaussian draw and compare
//! the approximation error with the discarded spectrum.

use spectron::net::spectral_init;
use spectron::svd::svd_oracle;
use spectron::Rng;

fn main() -> spectron::Result<()> {
    let (m, n) = (64, 64);
    for r in [4, 16, 32, 64] {
        let mut rng = Rng::new(5);
        let w0 = rng.gaussian_matrix(m, n, 1.0 / (n as f64).sqrt());
        let mut rng = Rng::new(5);
        let w = spectral_init(m, n, r, r as f64 / n as f64, &mut rng)?;
        let err = w0.sub(&w.materialize())?.frobenius_norm();
        let tail: f64 = svd_oracle(&w0)?.s[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
        println!(
            "rank {r:>2}: params {:>5} of {}  error {err:.6}  discarded spectrum {tail:.6}  |A|_F^2 {:.4}  |B|_F^2 {:.4}",
            w.param_count(),
            m * n,
            w.a.frobenius_norm().powi(2),
            w.b.frobenius_norm().powi(2)
        );
    }
    Ok(())
}
