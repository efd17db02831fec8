//! Blend a dense guide with its factorized student under a cosine-decayed
//! mixing weight.

use spectron::net::{spectral_init, SelfGuidedLinear};
use spectron::Rng;

fn main() -> spectron::Result<()> {
    let mut rng = Rng::new(9);
    let factors = spectral_init(24, 16, 4, 0.25, &mut rng)?;
    let mut layer = SelfGuidedLinear::new(factors, 0.5, false);
    // Let the dense branch drift away from the factors, as it would in training.
    layer.dense.axpy(0.1, &rng.gaussian_matrix(24, 16, 1.0))?;
    let x = rng.gaussian_matrix(5, 16, 1.0);
    let pure = layer.factors.materialize();
    let total = 100;
    for step in (0..=total).step_by(10) {
        let alpha = layer.alpha(step, total);
        let y = layer.forward(&x, alpha, &mut rng)?;
        let gap = y.sub(&x.matmul_t(&pure)?)?.frobenius_norm();
        println!("step {step:>3}: alpha {alpha:.3}  distance from factorized output {gap:.4}");
    }
    Ok(())
}
