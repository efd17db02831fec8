//! Record per-step spectral telemetry of one attention projection under each
//! factorial variant and render the three-panel figure.

use spectron::config::RunConfig;
use spectron::run::{cmd_spectral_trace, TRACE_VARIANTS};

fn main() -> spectron::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.steps = 200;
    cfg.output_dir = std::env::temp_dir().join("spectron-trace");
    let layer = "blocks.0.attn.o";
    let rows = cmd_spectral_trace(&cfg, layer)?;
    for v in TRACE_VARIANTS {
        let w: Vec<f64> = rows.iter().filter(|r| r.variant == v).map(|r| r.w_spec).collect();
        let dw = rows.iter().filter(|r| r.variant == v).map(|r| r.dw_spec).fold(0.0, f64::max);
        let (lo, hi) = w.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        println!("{:<16} max |dW| {dw:.3e}  |W| range {lo:.3}..{hi:.3}", v.name());
    }
    println!("trace.csv and trace.svg in {}", cfg.output_dir.display());
    Ok(())
}
