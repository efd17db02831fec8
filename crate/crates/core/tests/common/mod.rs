use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spectron::config::RunConfig;
use spectron::net::ModelConfig;
use spectron::scaling::ScalingFit;

/// A config small enough for a few seconds of training.
pub fn small_config(steps: usize, out: &Path) -> RunConfig {
    let mut c = RunConfig::desk();
    c.model = ModelConfig {
        vocab: 16,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        seq_len: 8,
        ..ModelConfig::default()
    };
    c.steps = steps;
    c.batch = 4;
    c.corpus_len = 4000;
    c.eval_batches = 2;
    c.output_dir = out.to_path_buf();
    c
}

pub fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let p = dir.join("config.json");
    std::fs::write(&p, cfg.to_json()).unwrap();
    p
}

pub fn spectron(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectron"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// The noiseless planted grid as a CSV.
pub fn planted_csv(path: &Path) {
    let planted = ScalingFit::planted(1000.0, 1000.0, 1.777, 0.398, 0.332);
    let pts = planted
        .sample_grid(&[2.2e18, 6.0e18, 1.5e19, 3.57e19], &[10, 10, 10, 9], 1.2)
        .unwrap();
    let mut text = String::from("n_params,tokens,loss\n");
    for q in pts {
        text.push_str(&format!("{:e},{:e},{:e}\n", q.n_params, q.tokens, q.loss));
    }
    std::fs::write(path, text).unwrap();
}
