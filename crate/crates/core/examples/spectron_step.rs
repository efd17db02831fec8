//! Fit a low-rank product to a fixed target with the spectrally renormalized
//! optimizer and watch the per-step update stay below the learning rate.

use spectron::net::spectral_init;
use spectron::optim::{composite_update, spectron_step, SpectronState};
use spectron::spectral::exact_spectral_norm;
use spectron::Rng;

fn main() -> spectron::Result<()> {
    let mut rng = Rng::new(11);
    let (m, n, r) = (48, 32, 8);
    let target = spectral_init(m, n, r, 0.25, &mut rng)?.materialize().scale(4.0);
    let mut w = spectral_init(m, n, r, 0.25, &mut rng)?;
    let eta = 0.05;
    let mut state = SpectronState::new("demo", &w, eta, &mut rng);
    for step in 0..=200 {
        // L = ½‖A·Bᵀ − T‖²_F
        let resid = w.materialize().sub(&target)?;
        let ga = resid.matmul(&w.b)?;
        let gb = resid.t_matmul(&w.a)?;
        let before = w.clone();
        let rep = spectron_step(&mut w, &ga, &gb, &mut state)?;
        let dw = exact_spectral_norm(&composite_update(&before.a, &before.b, &rep.delta_a, &rep.delta_b)?)?;
        if step % 25 == 0 {
            println!(
                "step {step:>3}: loss {:>10.4}  rho {:.5}  |dW| {dw:.5} (eta {eta})",
                0.5 * resid.frobenius_norm().powi(2),
                rep.rho
            );
        }
    }
    Ok(())
}
