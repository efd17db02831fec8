//! Train the desk-scale factorized transformer and write the run directory.
//!
//! `cargo run --release --example train_desk -- [variant] [eta] [steps]`

use spectron::config::RunConfig;
use spectron::run::cmd_train;

fn main() -> spectron::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig::desk();
    if let Some(v) = args.first() {
        cfg.optimizer.variant = v.parse()?;
    }
    if let Some(eta) = args.get(1) {
        cfg.optimizer.eta = eta.parse().map_err(|_| spectron::Error::Config(format!("bad eta {eta}")))?;
    }
    if let Some(steps) = args.get(2) {
        cfg.steps = steps.parse().map_err(|_| spectron::Error::Config(format!("bad steps {steps}")))?;
    }
    cfg.output_dir = std::env::temp_dir().join("spectron-desk");
    let s = cmd_train(&cfg)?;
    println!(
        "{} at eta {}: eval loss {:.4} -> {:?} after {} steps, max |dW| {:?}",
        s.variant, s.eta, s.initial_eval_loss, s.final_eval_loss, s.steps_completed, s.max_dw_spec
    );
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}
