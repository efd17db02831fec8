//! Pre-norm decoder-only transformer whose projections are factorized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::optim::{rank_for, FactorizedWeight};
use crate::rng::Rng;

use super::init::spectral_init;
use super::tape::{kernels, AttentionShape, Grads, NodeId, Tape};

fn default_vocab() -> usize {
    64
}

fn default_rank_ratio() -> f64 {
    0.25
}

/// Shape of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    #[serde(default = "default_rank_ratio")]
    pub rank_ratio: f64,
    pub seq_len: usize,
    /// Factorize only the feed-forward projections; attention stays dense.
    #[serde(default)]
    pub factorize_ffn_only: bool,
    /// Reuse the embedding table as the output head.
    #[serde(default)]
    pub tie_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab: default_vocab(),
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            rank_ratio: default_rank_ratio(),
            seq_len: 16,
            factorize_ffn_only: false,
            tie_head: false,
        }
    }
}

impl ModelConfig {
    pub const FFN_MULT: usize = 4;

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.vocab < 2 || self.vocab > u16::MAX as usize {
            return bad(format!("model.vocab must lie in 2..=65535, got {}", self.vocab));
        }
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.seq_len == 0 {
            return bad("model.d_model, n_layers, n_heads and seq_len must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if !(self.rank_ratio > 0.0 && self.rank_ratio <= 1.0) {
            return bad(format!("model.rank_ratio must lie in (0, 1], got {}", self.rank_ratio));
        }
        Ok(())
    }

    pub fn d_ff(&self) -> usize {
        Self::FFN_MULT * self.d_model
    }
}

/// `y = A·(Bᵀx)`, applied to row-stacked inputs as `X·B·Aᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedLinear {
    pub weight: FactorizedWeight,
    pub layer_id: String,
}

impl FactorizedLinear {
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        x.matmul(&self.weight.b)?.matmul_t(&self.weight.a)
    }
}

/// Ordinary `y = W·x`, used where factorization is switched off.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLinear {
    pub weight: DenseMatrix,
    pub layer_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    Factorized(FactorizedLinear),
    Dense(DenseLinear),
}

impl Projection {
    fn build(layer_id: String, m: usize, n: usize, factorize: bool, cfg: &ModelConfig, rng: &Rng) -> Result<Self> {
        let mut rng = rng.split(&layer_id);
        if factorize {
            let r = rank_for(n, cfg.rank_ratio).min(m.min(n));
            let weight = spectral_init(m, n, r, cfg.rank_ratio, &mut rng)?;
            Ok(Projection::Factorized(FactorizedLinear { weight, layer_id }))
        } else {
            let weight = rng.gaussian_matrix(m, n, 1.0 / (n as f64).sqrt());
            Ok(Projection::Dense(DenseLinear { weight, layer_id }))
        }
    }

    pub fn layer_id(&self) -> &str {
        match self {
            Projection::Factorized(f) => &f.layer_id,
            Projection::Dense(d) => &d.layer_id,
        }
    }

    /// (out, in)
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Projection::Factorized(f) => (f.weight.out_dim(), f.weight.in_dim()),
            Projection::Dense(d) => d.weight.shape(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Projection::Factorized(f) => f.weight.param_count(),
            Projection::Dense(d) => d.weight.data().len(),
        }
    }

    /// Effective dense weight.
    pub fn materialize(&self) -> DenseMatrix {
        match self {
            Projection::Factorized(f) => f.weight.materialize(),
            Projection::Dense(d) => d.weight.clone(),
        }
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            Projection::Factorized(f) => f.forward(x),
            Projection::Dense(d) => x.matmul_t(&d.weight),
        }
    }

    fn record(&self, tape: &mut Tape, x: NodeId) -> Result<(NodeId, ProjNodes)> {
        match self {
            Projection::Factorized(f) => {
                let a = tape.leaf(f.weight.a.clone());
                let b = tape.leaf(f.weight.b.clone());
                let t = tape.matmul(x, b)?;
                Ok((tape.matmul_t(t, a)?, ProjNodes::Factorized { a, b }))
            }
            Projection::Dense(d) => {
                let w = tape.leaf(d.weight.clone());
                Ok((tape.matmul_t(x, w)?, ProjNodes::Dense(w)))
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum ProjNodes {
    Factorized { a: NodeId, b: NodeId },
    Dense(NodeId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub q: Projection,
    pub k: Projection,
    pub v: Projection,
    pub o: Projection,
    pub up: Projection,
    pub down: Projection,
}

impl Block {
    fn projections(&self) -> [&Projection; 6] {
        [&self.q, &self.k, &self.v, &self.o, &self.up, &self.down]
    }

    fn projections_mut(&mut self) -> [&mut Projection; 6] {
        [
            &mut self.q,
            &mut self.k,
            &mut self.v,
            &mut self.o,
            &mut self.up,
            &mut self.down,
        ]
    }
}

/// Next-token language model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// vocab × d_model
    pub embed: DenseMatrix,
    /// seq_len × d_model
    pub pos: DenseMatrix,
    pub blocks: Vec<Block>,
    /// vocab × d_model; `None` when tied to the embedding.
    pub head: Option<DenseMatrix>,
}

/// Inputs and shifted targets for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub batch: usize,
    pub seq_len: usize,
    /// batch·seq_len ids, sequence-major.
    pub inputs: Vec<usize>,
    /// One target per input; `None` rows are excluded from the loss.
    pub targets: Vec<Option<usize>>,
}

impl TokenBatch {
    pub fn new(batch: usize, seq_len: usize, inputs: Vec<usize>, targets: Vec<Option<usize>>) -> Result<Self> {
        if inputs.len() != batch * seq_len || targets.len() != inputs.len() {
            return Err(Error::InvalidArgument(format!(
                "batch of {batch}×{seq_len} needs {} inputs and targets, got {} and {}",
                batch * seq_len,
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self { batch, seq_len, inputs, targets })
    }
}

/// A recorded forward pass.
#[derive(Debug)]
pub struct Forward {
    pub tape: Tape,
    /// (batch·seq_len) × vocab
    pub logits: NodeId,
    nodes: ParamNodes,
}

#[derive(Debug)]
struct ParamNodes {
    embed: NodeId,
    pos: NodeId,
    head: Option<NodeId>,
    projections: Vec<ProjNodes>,
}

/// Gradient of one projection.
#[derive(Clone, Debug, PartialEq)]
pub enum ProjGrad {
    Factorized { a: DenseMatrix, b: DenseMatrix },
    Dense(DenseMatrix),
}

/// Gradients for every parameter, in the order of [`Model::projections`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub embed: DenseMatrix,
    pub pos: DenseMatrix,
    pub head: Option<DenseMatrix>,
    pub projections: Vec<ProjGrad>,
}

impl Gradients {
    /// Flattened view aligned with [`Model::parameters`].
    pub fn named(&self) -> Vec<&DenseMatrix> {
        let mut out = vec![&self.embed, &self.pos];
        if let Some(h) = &self.head {
            out.push(h);
        }
        for p in &self.projections {
            match p {
                ProjGrad::Factorized { a, b } => {
                    out.push(a);
                    out.push(b);
                }
                ProjGrad::Dense(w) => out.push(w),
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|g| g.is_finite())
    }
}

impl Model {
    pub fn new(config: ModelConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let embed = rng.split("embed").gaussian_matrix(config.vocab, d, 1.0);
        let pos = rng.split("pos").gaussian_matrix(config.seq_len, d, 0.1);
        let head = (!config.tie_head)
            .then(|| rng.split("head").gaussian_matrix(config.vocab, d, 1.0 / (d as f64).sqrt()));
        let attn = !config.factorize_ffn_only;
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let id = |name: &str| format!("blocks.{l}.{name}");
            let ff = config.d_ff();
            blocks.push(Block {
                q: Projection::build(id("attn.q"), d, d, attn, &config, rng)?,
                k: Projection::build(id("attn.k"), d, d, attn, &config, rng)?,
                v: Projection::build(id("attn.v"), d, d, attn, &config, rng)?,
                o: Projection::build(id("attn.o"), d, d, attn, &config, rng)?,
                up: Projection::build(id("ffn.up"), ff, d, true, &config, rng)?,
                down: Projection::build(id("ffn.down"), d, ff, true, &config, rng)?,
            });
        }
        Ok(Self { config, embed, pos, blocks, head })
    }

    pub fn projections(&self) -> Vec<&Projection> {
        self.blocks.iter().flat_map(|b| b.projections()).collect()
    }

    pub fn projections_mut(&mut self) -> Vec<&mut Projection> {
        self.blocks.iter_mut().flat_map(|b| b.projections_mut()).collect()
    }

    pub fn layer_ids(&self) -> Vec<String> {
        self.projections().iter().map(|p| p.layer_id().to_string()).collect()
    }

    pub fn projection(&self, layer_id: &str) -> Option<&Projection> {
        self.projections().into_iter().find(|p| p.layer_id() == layer_id)
    }

    /// Every parameter matrix with a stable name, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = vec![("embed".to_string(), &self.embed), ("pos".to_string(), &self.pos)];
        if let Some(h) = &self.head {
            out.push(("head".to_string(), h));
        }
        for p in self.projections() {
            match p {
                Projection::Factorized(f) => {
                    out.push((format!("{}.A", f.layer_id), &f.weight.a));
                    out.push((format!("{}.B", f.layer_id), &f.weight.b));
                }
                Projection::Dense(d) => out.push((format!("{}.W", d.layer_id), &d.weight)),
            }
        }
        out
    }

    /// Mutable counterpart of [`Model::parameters`], same order.
    pub fn parameters_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out = vec![
            ("embed".to_string(), &mut self.embed),
            ("pos".to_string(), &mut self.pos),
        ];
        if let Some(h) = &mut self.head {
            out.push(("head".to_string(), h));
        }
        for b in &mut self.blocks {
            for p in b.projections_mut() {
                match p {
                    Projection::Factorized(f) => {
                        out.push((format!("{}.A", f.layer_id), &mut f.weight.a));
                        out.push((format!("{}.B", f.layer_id), &mut f.weight.b));
                    }
                    Projection::Dense(d) => out.push((format!("{}.W", d.layer_id), &mut d.weight)),
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, m)| m.data().len()).sum()
    }

    /// Parameter count of the same architecture with every projection dense.
    pub fn dense_param_count(&self) -> usize {
        let tables = self.embed.data().len()
            + self.pos.data().len()
            + self.head.as_ref().map_or(0, |h| h.data().len());
        tables
            + self
                .projections()
                .iter()
                .map(|p| {
                    let (m, n) = p.shape();
                    m * n
                })
                .sum::<usize>()
    }

    fn check_batch(&self, inputs: &[usize], batch: usize, seq_len: usize) -> Result<()> {
        if seq_len == 0 || seq_len > self.config.seq_len {
            return Err(Error::InvalidArgument(format!(
                "sequence length {seq_len} outside 1..={}",
                self.config.seq_len
            )));
        }
        if inputs.len() != batch * seq_len {
            return Err(Error::InvalidArgument(format!(
                "expected {} token ids, got {}",
                batch * seq_len,
                inputs.len()
            )));
        }
        if let Some(&bad) = inputs.iter().find(|&&t| t >= self.config.vocab) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.config.vocab
            )));
        }
        Ok(())
    }

    fn shape(&self, batch: usize, seq_len: usize) -> AttentionShape {
        AttentionShape {
            batch,
            seq_len,
            heads: self.config.n_heads,
        }
    }

    /// Records the forward pass on a fresh tape.
    pub fn forward(&self, inputs: &[usize], batch: usize, seq_len: usize) -> Result<Forward> {
        self.check_batch(inputs, batch, seq_len)?;
        let shape = self.shape(batch, seq_len);
        let pos_ids: Vec<usize> = (0..batch * seq_len).map(|i| i % seq_len).collect();

        let mut tape = Tape::new();
        let embed = tape.leaf(self.embed.clone());
        let pos = tape.leaf(self.pos.clone());
        let tok = tape.embed(embed, inputs)?;
        let at = tape.embed(pos, &pos_ids)?;
        let mut h = tape.add(tok, at)?;
        let mut projections = Vec::new();
        for block in &self.blocks {
            let a = tape.rms_norm(h)?;
            let (q, nq) = block.q.record(&mut tape, a)?;
            let (k, nk) = block.k.record(&mut tape, a)?;
            let (v, nv) = block.v.record(&mut tape, a)?;
            let att = tape.causal_attention(q, k, v, shape)?;
            let (o, no) = block.o.record(&mut tape, att)?;
            h = tape.add(h, o)?;
            let f = tape.rms_norm(h)?;
            let (u, nu) = block.up.record(&mut tape, f)?;
            let g = tape.gelu(u)?;
            let (dn, nd) = block.down.record(&mut tape, g)?;
            h = tape.add(h, dn)?;
            projections.extend([nq, nk, nv, no, nu, nd]);
        }
        let f = tape.rms_norm(h)?;
        let head = self.head.as_ref().map(|w| tape.leaf(w.clone()));
        let logits = tape.matmul_t(f, head.unwrap_or(embed))?;
        Ok(Forward {
            tape,
            logits,
            nodes: ParamNodes {
                embed,
                pos,
                head,
                projections,
            },
        })
    }

    /// Same computation as [`Model::forward`] with no tape.
    pub fn reference_logits(&self, inputs: &[usize], batch: usize, seq_len: usize) -> Result<DenseMatrix> {
        self.check_batch(inputs, batch, seq_len)?;
        let shape = self.shape(batch, seq_len);
        let pos_ids: Vec<usize> = (0..batch * seq_len).map(|i| i % seq_len).collect();
        let tok = kernels::gather_rows(&self.embed, inputs)?;
        let at = kernels::gather_rows(&self.pos, &pos_ids)?;
        let mut h = tok.add(&at)?;
        for block in &self.blocks {
            let a = kernels::rms_norm_rows(&h);
            let q = block.q.forward(&a)?;
            let k = block.k.forward(&a)?;
            let v = block.v.forward(&a)?;
            let (att, _) = kernels::causal_attention(&q, &k, &v, shape)?;
            h = h.add(&block.o.forward(&att)?)?;
            let f = kernels::rms_norm_rows(&h);
            let g = kernels::gelu(&block.up.forward(&f)?);
            h = h.add(&block.down.forward(&g)?)?;
        }
        let f = kernels::rms_norm_rows(&h);
        f.matmul_t(self.head.as_ref().unwrap_or(&self.embed))
    }

    /// Mean cross-entropy of a batch, evaluated without a tape.
    pub fn loss(&self, batch: &TokenBatch) -> Result<f64> {
        let logits = self.reference_logits(&batch.inputs, batch.batch, batch.seq_len)?;
        let mut total = 0.0;
        let mut count = 0usize;
        for (r, t) in batch.targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= self.config.vocab {
                    return Err(Error::InvalidArgument(format!("target {t} out of range")));
                }
                total -= kernels::log_softmax_at(logits.row(r), t);
                count += 1;
            }
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    /// Loss and gradients of every parameter.
    pub fn loss_and_grads(&self, batch: &TokenBatch) -> Result<(f64, Gradients)> {
        let mut fwd = self.forward(&batch.inputs, batch.batch, batch.seq_len)?;
        let loss_node = fwd.tape.cross_entropy(fwd.logits, &batch.targets)?;
        let loss = fwd.tape.value(loss_node).get(0, 0);
        let grads = fwd.tape.backward(loss_node)?;
        Ok((loss, self.collect(&fwd, &grads)))
    }

    fn collect(&self, fwd: &Forward, grads: &Grads) -> Gradients {
        let n = &fwd.nodes;
        let projections = self
            .projections()
            .iter()
            .zip(&n.projections)
            .map(|(p, nodes)| match (p, nodes) {
                (Projection::Factorized(f), ProjNodes::Factorized { a, b }) => ProjGrad::Factorized {
                    a: grads.get_or_zeros(*a, &f.weight.a),
                    b: grads.get_or_zeros(*b, &f.weight.b),
                },
                (Projection::Dense(d), ProjNodes::Dense(w)) => ProjGrad::Dense(grads.get_or_zeros(*w, &d.weight)),
                _ => unreachable!("projection kinds are fixed at construction"),
            })
            .collect();
        Gradients {
            embed: grads.get_or_zeros(n.embed, &self.embed),
            pos: grads.get_or_zeros(n.pos, &self.pos),
            head: match (n.head, &self.head) {
                (Some(id), Some(h)) => Some(grads.get_or_zeros(id, h)),
                _ => None,
            },
            projections,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(tie: bool) -> Model {
        let cfg = ModelConfig {
            vocab: 11,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            seq_len: 5,
            tie_head: tie,
            ..ModelConfig::default()
        };
        Model::new(cfg, &Rng::new(1)).unwrap()
    }

    fn batch(model: &Model, seed: u64, b: usize, t: usize) -> TokenBatch {
        let mut rng = Rng::new(seed);
        let v = model.config.vocab;
        let inputs: Vec<usize> = (0..b * t).map(|_| rng.below(v)).collect();
        let targets = (0..b * t).map(|_| Some(rng.below(v))).collect();
        TokenBatch::new(b, t, inputs, targets).unwrap()
    }

    #[test]
    fn taped_and_reference_logits_agree_exactly() {
        let m = tiny(false);
        let b = batch(&m, 2, 3, 5);
        let fwd = m.forward(&b.inputs, 3, 5).unwrap();
        let reference = m.reference_logits(&b.inputs, 3, 5).unwrap();
        assert_eq!(fwd.tape.value(fwd.logits), &reference);
        assert_eq!(reference.shape(), (15, 11));
        assert!(reference.is_finite());
    }

    #[test]
    fn zero_tied_embedding_gives_uniform_predictions() {
        let mut m = tiny(true);
        m.embed = DenseMatrix::zeros(11, 8);
        let b = batch(&m, 3, 2, 5);
        let logits = m.reference_logits(&b.inputs, 2, 5).unwrap();
        let p = kernels::softmax_rows(&logits);
        assert!(p.data().iter().all(|x| (x - 1.0 / 11.0).abs() < 1e-12));
    }

    #[test]
    fn zero_tables_give_uniform_predictions_with_untied_head() {
        let mut m = tiny(false);
        m.embed = DenseMatrix::zeros(11, 8);
        m.pos = DenseMatrix::zeros(5, 8);
        let b = batch(&m, 3, 2, 5);
        let p = kernels::softmax_rows(&m.reference_logits(&b.inputs, 2, 5).unwrap());
        assert!(p.data().iter().all(|x| (x - 1.0 / 11.0).abs() < 1e-12));
    }

    #[test]
    fn batch_permutation_permutes_logits() {
        let m = tiny(false);
        let b = batch(&m, 4, 3, 5);
        let logits = m.reference_logits(&b.inputs, 3, 5).unwrap();
        let perm = [2, 0, 1];
        let permuted: Vec<usize> = perm.iter().flat_map(|&s| b.inputs[s * 5..s * 5 + 5].to_vec()).collect();
        let pl = m.reference_logits(&permuted, 3, 5).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for t in 0..5 {
                assert_eq!(pl.row(dst * 5 + t), logits.row(src * 5 + t));
            }
        }
    }

    #[test]
    fn out_of_range_token_is_rejected() {
        let m = tiny(false);
        assert!(m.forward(&[0, 1, 11, 2, 3], 1, 5).is_err());
        assert!(m.reference_logits(&[0; 6], 1, 6).is_err());
    }

    #[test]
    fn unused_position_rows_get_zero_gradient() {
        let m = tiny(false);
        let b = batch(&m, 5, 2, 3);
        let (_, g) = m.loss_and_grads(&b).unwrap();
        for row in 3..5 {
            assert!(g.pos.row(row).iter().all(|&x| x == 0.0));
        }
        assert!(g.pos.row(0).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn ignored_targets_do_not_contribute() {
        let m = tiny(false);
        let mut b = batch(&m, 6, 1, 5);
        let (full, _) = m.loss_and_grads(&b).unwrap();
        b.targets[4] = None;
        let (partial, _) = m.loss_and_grads(&b).unwrap();
        assert_ne!(full, partial);
        b.targets = vec![None; 5];
        let (zero, g) = m.loss_and_grads(&b).unwrap();
        assert_eq!(zero, 0.0);
        assert!(g.named().iter().all(|x| x.is_zero()));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = tiny(false);
        let b = batch(&m, 7, 2, 5);
        let (_, g) = m.loss_and_grads(&b).unwrap();
        let analytic: Vec<DenseMatrix> = g.named().into_iter().cloned().collect();
        let mut pick = Rng::new(8);
        let h = 1e-5;
        for _ in 0..30 {
            let pi = pick.below(analytic.len());
            let ei = pick.below(analytic[pi].data().len());
            let eval = |m: &mut Model, delta: f64| {
                m.parameters_mut()[pi].1.data_mut()[ei] += delta;
                let l = m.loss(&b).unwrap();
                m.parameters_mut()[pi].1.data_mut()[ei] -= delta;
                l
            };
            let numeric = (eval(&mut m, h) - eval(&mut m, -h)) / (2.0 * h);
            let a = analytic[pi].data()[ei];
            assert!((a - numeric).abs() <= 1e-4 * a.abs().max(1e-3), "param {pi}[{ei}]: {a} vs {numeric}");
        }
    }

    #[test]
    fn factorized_forward_matches_materialized_weight() {
        let m = tiny(false);
        for p in m.projections() {
            let x = Rng::new(9).gaussian_matrix(4, p.shape().1, 1.0);
            let direct = x.matmul_t(&p.materialize()).unwrap();
            assert!(p.forward(&x).unwrap().sub(&direct).unwrap().max_abs() <= 1e-10);
        }
    }

    #[test]
    fn parameter_census() {
        for ffn_only in [false, true] {
            let cfg = ModelConfig {
                d_model: 16,
                factorize_ffn_only: ffn_only,
                ..ModelConfig::default()
            };
            let m = Model::new(cfg.clone(), &Rng::new(10)).unwrap();
            let (d, ff, v, t) = (16usize, 64usize, cfg.vocab, cfg.seq_len);
            let tables = 2 * v * d + t * d;
            let dense = tables + cfg.n_layers * (4 * d * d + 2 * d * ff);
            assert_eq!(m.dense_param_count(), dense);
            // Σ over layers of m·n − r·(m + n); r = round(0.25·n) capped at min(m, n).
            let saving = |m: usize, n: usize, r: usize| (m * n) as i64 - (r * (m + n)) as i64;
            let attn = if ffn_only { 0 } else { 4 * saving(d, d, 4) };
            let per_layer = attn + saving(ff, d, 4) + saving(d, ff, 16);
            let expected = dense as i64 - cfg.n_layers as i64 * per_layer;
            assert_eq!(m.param_count() as i64, expected);
            let dense_layers = m.projections().iter().filter(|p| matches!(p, Projection::Dense(_))).count();
            assert_eq!(dense_layers, if ffn_only { 4 * cfg.n_layers } else { 0 });
        }
    }

    #[test]
    fn loss_is_deterministic() {
        let a = tiny(false);
        let b = tiny(false);
        let x = batch(&a, 11, 2, 5);
        assert_eq!(a.loss_and_grads(&x).unwrap(), b.loss_and_grads(&x).unwrap());
    }
}
