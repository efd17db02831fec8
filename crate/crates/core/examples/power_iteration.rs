//! Track the top singular value of a slowly drifting matrix with one
//! warm-started power iteration per step.

use spectron::spectral::{exact_spectral_norm, power_iter};
use spectron::Rng;

fn main() -> spectron::Result<()> {
    let mut rng = Rng::new(3);
    let mut w = rng.gaussian_matrix(64, 24, 1.0);
    let mut u = rng.unit_vector(64);
    for step in 0..30 {
        let est = power_iter(&w, &u, 1)?;
        u = est.u;
        let exact = exact_spectral_norm(&w)?;
        if step % 5 == 0 || step == 29 {
            println!(
                "step {step:>2}: estimate {:.6}  exact {exact:.6}  rel err {:.2e}",
                est.sigma,
                (exact - est.sigma) / exact
            );
        }
        w.axpy(0.01, &rng.gaussian_matrix(64, 24, 1.0))?;
    }
    Ok(())
}
