//! The training loop.
//!
//! A run draws random windows from the first 90% of a synthetic token stream
//! and evaluates on fixed windows from the rest. A non-finite loss, gradient
//! or weight marks the run diverged and stops it; that step's row is still
//! logged.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::net::{synth_corpus, Gradients, Model, ProjGrad, Projection, TokenBatch};
use crate::optim::{AdamState, DenseOptimizer, FactorizedOptimizer, FactorizedWeight, Hyper};
use crate::rng::Rng;
use crate::telemetry::{self, ProbeBatch, TelemetryRecord};

/// One row of `loss.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    /// Training loss of the step's batch, before the update.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub losses: Vec<LossRow>,
    pub telemetry: Vec<TelemetryRecord>,
    pub initial_eval: f64,
    /// Held-out loss after training; infinite when the run diverged.
    pub final_eval: f64,
    pub diverged_at: Option<usize>,
}

impl TrainOutcome {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// Largest `‖ΔW‖₂` over all recorded telemetry; infinite once anything
    /// recorded is non-finite.
    pub fn max_dw_spec(&self) -> f64 {
        self.telemetry
            .iter()
            .map(|r| if r.dw_spec.is_finite() { r.dw_spec } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

enum ProjOpt {
    Factorized(FactorizedOptimizer),
    Dense(DenseOptimizer),
}

struct Tracked {
    index: usize,
    layer_id: String,
    probes: ProbeBatch,
}

/// Resolves telemetry layer ids to projection indices.
pub fn resolve_layers(model: &Model, layers: &[String]) -> Result<Vec<usize>> {
    let projections = model.projections();
    let valid: Vec<&str> = projections
        .iter()
        .filter(|p| matches!(p, Projection::Factorized(_)))
        .map(|p| p.layer_id())
        .collect();
    layers
        .iter()
        .map(|id| {
            projections
                .iter()
                .position(|p| p.layer_id() == id && matches!(p, Projection::Factorized(_)))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown or unfactorized telemetry layer `{id}`; valid ids: {}",
                        valid.join(", ")
                    ))
                })
        })
        .collect()
}

/// Windows of `seq_len + 1` tokens split into inputs and next-token targets.
fn window_batch(tokens: &[u16], starts: &[usize], seq_len: usize) -> Result<TokenBatch> {
    let mut inputs = Vec::with_capacity(starts.len() * seq_len);
    let mut targets = Vec::with_capacity(starts.len() * seq_len);
    for &s in starts {
        let w = &tokens[s..s + seq_len + 1];
        inputs.extend(w[..seq_len].iter().map(|&t| t as usize));
        targets.extend(w[1..].iter().map(|&t| Some(t as usize)));
    }
    TokenBatch::new(starts.len(), seq_len, inputs, targets)
}

fn loss_or_nan(model: &Model, batch: &TokenBatch) -> Result<f64> {
    match model.loss(batch) {
        Ok(l) => Ok(l),
        Err(Error::NonFinite(_)) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

/// A model, its data and its optimizer states.
pub struct Trainer {
    config: RunConfig,
    model: Model,
    corpus: Vec<u16>,
    train_end: usize,
    eval: Vec<TokenBatch>,
    batch_rng: Rng,
    hyper: Hyper,
    proj_opts: Vec<ProjOpt>,
    table_opts: Vec<AdamState>,
    tracked: Vec<Tracked>,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.seed);
        let model = Model::new(config.model.clone(), &root.split("model"))?;
        let corpus = synth_corpus(config.seed, config.model.vocab, config.corpus_len)?;
        let seq = config.model.seq_len;
        let train_end = corpus.len() * 9 / 10;
        let held_out = corpus.len() - train_end;
        let mut eval_rng = root.split("eval");
        let eval = (0..config.eval_batches)
            .map(|_| {
                let starts: Vec<usize> = (0..config.batch)
                    .map(|_| train_end + eval_rng.below(held_out - seq))
                    .collect();
                window_batch(&corpus, &starts, seq)
            })
            .collect::<Result<Vec<_>>>()?;

        let variant = config.optimizer.variant;
        let hyper = config.optimizer.hyper();
        let proj_opts = model
            .projections()
            .into_iter()
            .map(|p| {
                let mut rng = root.split(&format!("opt.{}", p.layer_id()));
                match p {
                    Projection::Factorized(f) => ProjOpt::Factorized(FactorizedOptimizer::new(
                        variant,
                        f.layer_id.clone(),
                        &f.weight,
                        &hyper,
                        &mut rng,
                    )),
                    Projection::Dense(d) => ProjOpt::Dense(DenseOptimizer::new(
                        variant.dense_rule(),
                        d.layer_id.clone(),
                        &d.weight,
                        &mut rng,
                    )),
                }
            })
            .collect();
        let mut table_opts = vec![
            AdamState::new(model.embed.rows(), model.embed.cols()),
            AdamState::new(model.pos.rows(), model.pos.cols()),
        ];
        if let Some(h) = &model.head {
            table_opts.push(AdamState::new(h.rows(), h.cols()));
        }
        let indices = resolve_layers(&model, &config.telemetry_layers)?;
        let tracked = indices
            .into_iter()
            .zip(&config.telemetry_layers)
            .map(|(index, id)| {
                let n = model.projections()[index].shape().1;
                let mut rng = root.split(&format!("probes.{id}"));
                Tracked {
                    index,
                    layer_id: id.clone(),
                    probes: ProbeBatch::random(n, ProbeBatch::DEFAULT_COUNT, &mut rng),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            model,
            corpus,
            train_end,
            eval,
            batch_rng: root.split("batches"),
            hyper,
            proj_opts,
            table_opts,
            tracked,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Mean loss over the fixed held-out batches.
    pub fn eval_loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for b in &self.eval {
            total += loss_or_nan(&self.model, b)?;
        }
        Ok(total / self.eval.len() as f64)
    }

    fn next_batch(&mut self) -> Result<TokenBatch> {
        let seq = self.config.model.seq_len;
        let span = self.train_end - seq;
        let starts: Vec<usize> = (0..self.config.batch).map(|_| self.batch_rng.below(span)).collect();
        window_batch(&self.corpus, &starts, seq)
    }

    fn factor_snapshot(&self, index: usize) -> FactorizedWeight {
        match self.model.projections()[index] {
            Projection::Factorized(f) => f.weight.clone(),
            Projection::Dense(_) => unreachable!("telemetry layers are factorized"),
        }
    }

    /// Applies one update from `grads` at hidden rate `lr` and table rate `table_lr`.
    fn apply(&mut self, grads: &Gradients, lr: f64, table_lr: f64) -> Result<()> {
        let adam = self.hyper.adam;
        let tables: Vec<&mut DenseMatrix> = {
            let m = &mut self.model;
            let mut v = vec![&mut m.embed, &mut m.pos];
            if let Some(h) = m.head.as_mut() {
                v.push(h);
            }
            v
        };
        let mut table_grads = vec![&grads.embed, &grads.pos];
        if let Some(h) = &grads.head {
            table_grads.push(h);
        }
        for ((w, g), st) in tables.into_iter().zip(table_grads).zip(&mut self.table_opts) {
            let d = st.delta(g, table_lr, &adam)?;
            w.axpy(-1.0, &d)?;
        }
        let hyper = self.hyper;
        for ((p, g), opt) in self
            .model
            .projections_mut()
            .into_iter()
            .zip(&grads.projections)
            .zip(&mut self.proj_opts)
        {
            match (p, g, opt) {
                (Projection::Factorized(f), ProjGrad::Factorized { a, b }, ProjOpt::Factorized(o)) => {
                    o.step(&mut f.weight, a, b, lr, &adam)?;
                }
                (Projection::Dense(d), ProjGrad::Dense(gw), ProjOpt::Dense(o)) => {
                    o.step(&mut d.weight, gw, lr, &hyper)?;
                }
                _ => unreachable!("gradients follow the projection layout"),
            }
        }
        Ok(())
    }

    fn weights_finite(&self) -> bool {
        self.model.parameters().iter().all(|(_, m)| m.is_finite())
    }

    /// Runs the configured number of steps.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let initial_eval = self.eval_loss()?;
        let mut losses = Vec::with_capacity(self.config.steps);
        let mut records = Vec::new();
        let mut diverged_at = None;
        for step in 0..self.config.steps {
            let factor = self.config.lr_factor(step);
            let lr = self.config.optimizer.eta * factor;
            let table_lr = self.config.optimizer.table_lr * factor;
            let batch = self.next_batch()?;
            let (loss, grads) = self.model.loss_and_grads(&batch)?;
            losses.push(LossRow { step, loss, lr });
            if !loss.is_finite() || !grads.is_finite() {
                diverged_at = Some(step);
                break;
            }
            let before: Vec<FactorizedWeight> = self.tracked.iter().map(|t| self.factor_snapshot(t.index)).collect();
            match self.apply(&grads, lr, table_lr) {
                Ok(()) => {}
                Err(Error::NonFinite(_)) => {
                    diverged_at = Some(step);
                    break;
                }
                Err(e) => return Err(e),
            }
            if !self.weights_finite() {
                diverged_at = Some(step);
                break;
            }
            for (t, b) in self.tracked.iter().zip(&before) {
                let after = self.factor_snapshot(t.index);
                records.push(telemetry::record(step as u64, &t.layer_id, b, &after, &t.probes)?);
            }
        }
        let final_eval = if diverged_at.is_some() {
            f64::INFINITY
        } else {
            let l = self.eval_loss()?;
            if l.is_finite() { l } else { f64::INFINITY }
        };
        Ok(TrainOutcome {
            model: self.model,
            losses,
            telemetry: records,
            initial_eval,
            final_eval,
            diverged_at,
        })
    }
}

/// Builds and runs a trainer for `config`.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    Trainer::new(config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use crate::optim::OptimizerVariant;

    fn tiny(steps: usize) -> RunConfig {
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
        c
    }

    #[test]
    fn zero_steps_leave_the_model_at_initialization() {
        let c = tiny(0);
        let out = train(&c).unwrap();
        assert!(out.losses.is_empty() && out.telemetry.is_empty());
        assert_eq!(out.model, Model::new(c.model.clone(), &Rng::new(c.seed).split("model")).unwrap());
        assert_eq!(out.initial_eval, out.final_eval);
    }

    #[test]
    fn runs_are_bit_identical() {
        let c = tiny(5);
        let a = train(&c).unwrap();
        let b = train(&c).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.telemetry, b.telemetry);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn telemetry_covers_every_step_of_each_layer() {
        let mut c = tiny(4);
        c.telemetry_layers = vec!["blocks.0.attn.o".into(), "blocks.0.ffn.up".into()];
        let out = train(&c).unwrap();
        assert_eq!(out.telemetry.len(), 8);
        assert!(out.telemetry.iter().all(|r| r.is_finite()));
        // Spectron keeps every factor step inside its radius.
        for r in &out.telemetry {
            assert!(r.rho <= out.losses[r.step as usize].lr * 1.5 + 1e-12, "{r:?}");
        }
    }

    #[test]
    fn unknown_and_dense_layers_are_rejected_with_valid_ids() {
        let mut c = tiny(1);
        c.telemetry_layers = vec!["blocks.9.attn.q".into()];
        let msg = Trainer::new(&c).err().unwrap().to_string();
        assert!(msg.contains("blocks.0.attn.q") && msg.contains("blocks.0.ffn.down"), "{msg}");
        c.model.factorize_ffn_only = true;
        c.telemetry_layers = vec!["blocks.0.attn.o".into()];
        assert!(Trainer::new(&c).is_err());
    }

    #[test]
    fn every_variant_trains_a_few_steps() {
        for v in OptimizerVariant::GRID.into_iter().chain([OptimizerVariant::AdaptiveMoments]) {
            let mut c = tiny(3);
            c.optimizer.variant = v;
            let out = train(&c).unwrap();
            assert_eq!(out.losses.len(), 3, "{v}");
            assert!(!out.diverged(), "{v}");
        }
    }

    #[test]
    fn dense_attention_mode_trains() {
        let mut c = tiny(3);
        c.model.factorize_ffn_only = true;
        c.telemetry_layers = vec!["blocks.0.ffn.down".into()];
        assert!(!train(&c).unwrap().diverged());
    }

    #[test]
    fn non_finite_weights_stop_the_run() {
        let c = tiny(10);
        let mut t = Trainer::new(&c).unwrap();
        let (r, k) = t.model.embed.shape();
        t.model.embed = DenseMatrix::from_raw(r, k, vec![f64::NAN; r * k]);
        let out = t.run().unwrap();
        assert_eq!(out.diverged_at, Some(0));
        assert_eq!(out.losses.len(), 1);
        assert!(out.losses[0].loss.is_nan());
        assert_eq!(out.final_eval, f64::INFINITY);
    }
}
