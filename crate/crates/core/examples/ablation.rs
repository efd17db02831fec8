//! Run the optimizer ablation on a shortened desk config and print both tables.

use spectron::config::RunConfig;
use spectron::run::run_ablation;

fn main() -> spectron::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let report = run_ablation(&cfg)?;
    for (title, rows) in [("factorial grid", &report.grid), ("baselines", &report.baselines)] {
        println!("{title}:");
        for (i, r) in rows.iter().enumerate() {
            println!(
                "  {:>2}. {:<18} eta {:<6} final {:.4}  max |dW| {:.3e}{}",
                i + 1,
                r.variant.name(),
                r.eta,
                r.final_loss,
                r.max_dw_spec,
                if r.diverged { "  diverged" } else { "" }
            );
        }
    }
    Ok(())
}
