//! Run configuration documents.
//!
//! Configs are JSON with unknown fields rejected. A resolved config is echoed
//! into each run's `manifest.json`, which can be fed back in unchanged.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ModelConfig;
use crate::optim::{AdamConfig, Hyper, OptimizerVariant};
use crate::spectral::NewtonSchulzConfig;

/// Learning-rate schedule shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Linear warmup over `warmup_frac` of the steps, then cosine decay to 0.
    #[default]
    WarmupCosine,
    Constant,
}

fn default_variant() -> OptimizerVariant {
    OptimizerVariant::Spectron
}
fn default_eta() -> f64 {
    0.01
}
fn default_beta() -> f64 {
    0.95
}
fn default_k_ns() -> usize {
    5
}
fn default_k_power() -> usize {
    1
}
fn default_table_lr() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_variant")]
    pub variant: OptimizerVariant,
    /// Peak learning rate for hidden matrices.
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_k_ns")]
    pub k_ns: usize,
    #[serde(default = "default_k_power")]
    pub k_power: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: Schedule,
    /// Peak AdamW learning rate for the embedding, positional and head tables.
    #[serde(default = "default_table_lr")]
    pub table_lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            variant: default_variant(),
            eta: default_eta(),
            beta: default_beta(),
            k_ns: default_k_ns(),
            k_power: default_k_power(),
            weight_decay: 0.0,
            schedule: Schedule::default(),
            table_lr: default_table_lr(),
        }
    }
}

impl OptimizerConfig {
    pub fn hyper(&self) -> Hyper {
        Hyper {
            beta: self.beta,
            ns: NewtonSchulzConfig::with_steps(self.k_ns),
            k_power: self.k_power,
            weight_decay: self.weight_decay,
            adam: AdamConfig::default(),
        }
    }
}

fn default_warmup_frac() -> f64 {
    0.05
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}
fn default_corpus_len() -> usize {
    200_000
}
fn default_eval_batches() -> usize {
    8
}

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub batch: usize,
    #[serde(default = "default_warmup_frac")]
    pub warmup_frac: f64,
    /// Layers to record spectral telemetry for, e.g. `blocks.0.attn.o`.
    #[serde(default)]
    pub telemetry_layers: Vec<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Length of the synthetic token stream; the last tenth is held out.
    #[serde(default = "default_corpus_len")]
    pub corpus_len: usize,
    /// Held-out batches used for the initial and final evaluation loss.
    #[serde(default = "default_eval_batches")]
    pub eval_batches: usize,
}

impl RunConfig {
    /// The desk-scale reference setup.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            steps: 2000,
            batch: 8,
            warmup_frac: default_warmup_frac(),
            telemetry_layers: vec!["blocks.0.attn.o".into()],
            output_dir: default_output_dir(),
            corpus_len: default_corpus_len(),
            eval_batches: default_eval_batches(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let o = &self.optimizer;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(o.eta > 0.0 && o.eta.is_finite()) {
            return bad(format!("optimizer.eta must be positive, got {}", o.eta));
        }
        if !(0.0..1.0).contains(&o.beta) {
            return bad(format!("optimizer.beta must lie in [0, 1), got {}", o.beta));
        }
        if o.k_power == 0 {
            return bad("optimizer.k_power must be at least 1".into());
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return bad(format!("optimizer.weight_decay must be non-negative, got {}", o.weight_decay));
        }
        if !(o.table_lr >= 0.0 && o.table_lr.is_finite()) {
            return bad(format!("optimizer.table_lr must be non-negative, got {}", o.table_lr));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad(format!("warmup_frac must lie in [0, 1], got {}", self.warmup_frac));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if self.eval_batches == 0 {
            return bad("eval_batches must be positive".into());
        }
        let need = 10 * (self.model.seq_len + 2);
        if self.corpus_len < need {
            return bad(format!(
                "corpus_len must be at least {need} for seq_len {}",
                self.model.seq_len
            ));
        }
        Ok(())
    }

    /// Learning-rate multiplier in `[0, 1]` at `step` (0-based).
    pub fn lr_factor(&self, step: usize) -> f64 {
        match self.optimizer.schedule {
            Schedule::Constant => 1.0,
            Schedule::WarmupCosine => {
                let warmup = (self.warmup_frac * self.steps as f64).round() as usize;
                if step < warmup {
                    (step + 1) as f64 / warmup as f64
                } else {
                    let span = self.steps.saturating_sub(warmup).max(1) as f64;
                    let progress = (step - warmup) as f64 / span;
                    0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 3,
        "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "seq_len": 8},
        "steps": 10,
        "batch": 4
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(c.model.vocab, 64);
        assert_eq!(c.model.rank_ratio, 0.25);
        assert_eq!(c.optimizer.variant, OptimizerVariant::Spectron);
        assert_eq!(c.optimizer.k_ns, 5);
        assert_eq!(c.warmup_frac, 0.05);
    }

    #[test]
    fn unknown_fields_are_rejected_with_position() {
        let text = MINIMAL.replace("\"batch\": 4", "\"batch\": 4,\n        \"bacth\": 5");
        let err = RunConfig::from_json_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bacth") && msg.contains("line 6"), "{msg}");
        assert!(err.is_invalid_input());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let text = MINIMAL.replace("\"n_heads\": 2", "\"n_heads\": 3");
        assert!(RunConfig::from_json_str(&text).is_err());
        let text = MINIMAL.replace("\"batch\": 4", "\"batch\": 0");
        assert!(RunConfig::from_json_str(&text).is_err());
        assert!(RunConfig::from_json_str("{").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::desk();
        assert_eq!(RunConfig::from_json_str(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let mut c = RunConfig::desk();
        c.steps = 100;
        assert!((c.lr_factor(0) - 0.2).abs() < 1e-15);
        assert_eq!(c.lr_factor(4), 1.0);
        assert_eq!(c.lr_factor(5), 1.0);
        assert!(c.lr_factor(99) < 0.01);
        for s in 5..99 {
            assert!(c.lr_factor(s + 1) <= c.lr_factor(s));
        }
        c.optimizer.schedule = Schedule::Constant;
        assert_eq!(c.lr_factor(99), 1.0);
    }
}
