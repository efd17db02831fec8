//! Recover a planted scaling surface from noiseless runs along four compute
//! budgets with both fitting routes, then derive allocation exponents and the
//! inference-savings estimate.

use spectron::run::{fit_points, FitMode};
use spectron::scaling::{compute_optimal, inference_savings, ScalingFit};

fn main() -> spectron::Result<()> {
    let planted = ScalingFit::planted(1000.0, 1000.0, 1.777, 0.398, 0.332);
    let points = planted.sample_grid(&[2.2e18, 6.0e18, 1.5e19, 3.57e19], &[10, 10, 10, 9], 1.2)?;
    let (doc, figures) = fit_points(&points, FitMode::Parametric)?;
    let p = doc.parametric.expect("parametric report");
    println!(
        "parametric: alpha {:.4} beta {:.4} E {:.4} (objective {:.2e}, start {})",
        p.fit.alpha, p.fit.beta, p.fit.irreducible, p.fit.objective, p.fit.start_index
    );
    let (doc, _) = fit_points(&points, FitMode::Isoflop)?;
    let iso = doc.isoflop.expect("isoflop report");
    println!("isoflop: N_opt ~ C^{:.4} over {} budgets", iso.n_opt_law.exponent, iso.curves.len());
    let (a_n, a_d) = compute_optimal(0.398, 0.332)?;
    println!("compute-optimal exponents: N {a_n:.2}, D {a_d:.2}");
    for c in [1e22, 1e24, 1e26] {
        println!("inference savings at C = {c:e}: {:.1}%", inference_savings(c)?);
    }
    println!("{} figures rendered ({} bytes for the first)", figures.len(), figures[0].len());
    Ok(())
}
