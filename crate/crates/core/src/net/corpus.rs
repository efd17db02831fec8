//! Synthetic next-token data: a seeded order-2 Markov source and the binary
//! token file it is cached in.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Fraction of `ln V` targeted as the per-token entropy.
pub const ENTROPY_FRACTION: f64 = 0.6;
const CALIBRATION_CONTEXTS: usize = 4096;
const CACHE_LIMIT: usize = 1 << 21;

/// `P(x | c2, c1) ∝ exp(s·(U[c1, x] + W[c2, x]))` with Gaussian `U`, `W` and a
/// temperature `s` tuned so the mean context entropy is `0.6·ln V`.
#[derive(Clone, Debug)]
pub struct MarkovSource {
    vocab: usize,
    /// V × V, indexed by (previous token, next token).
    u: Vec<f64>,
    /// V × V, indexed by (token two back, next token).
    w: Vec<f64>,
    sharpness: f64,
    /// Full V³ table when small enough.
    table: Option<Vec<f64>>,
}

impl MarkovSource {
    pub fn new(seed: u64, vocab: usize) -> Result<Self> {
        if !(2..=u16::MAX as usize).contains(&vocab) {
            return Err(Error::InvalidArgument(format!(
                "vocabulary must lie in 2..=65535, got {vocab}"
            )));
        }
        let mut rng = Rng::for_site(seed, "corpus.table");
        let u = rng.gaussian_vec(vocab * vocab, 1.0);
        let w = rng.gaussian_vec(vocab * vocab, 1.0);
        let mut src = Self {
            vocab,
            u,
            w,
            sharpness: 0.0,
            table: None,
        };
        let contexts = src.calibration_contexts(&mut rng);
        let target = ENTROPY_FRACTION * (vocab as f64).ln();
        let mean_entropy = |s: f64, src: &mut Self| {
            src.sharpness = s;
            contexts
                .iter()
                .map(|&(c2, c1)| entropy(&src.compute(c2, c1)))
                .sum::<f64>()
                / contexts.len() as f64
        };
        let mut hi = 1.0;
        while mean_entropy(hi, &mut src) > target {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mean_entropy(mid, &mut src) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        src.sharpness = 0.5 * (lo + hi);
        if vocab.pow(3) <= CACHE_LIMIT {
            let mut table = Vec::with_capacity(vocab.pow(3));
            for c2 in 0..vocab {
                for c1 in 0..vocab {
                    table.extend(src.compute(c2, c1));
                }
            }
            src.table = Some(table);
        }
        Ok(src)
    }

    fn calibration_contexts(&self, rng: &mut Rng) -> Vec<(usize, usize)> {
        let v = self.vocab;
        if v * v <= CALIBRATION_CONTEXTS {
            (0..v * v).map(|i| (i / v, i % v)).collect()
        } else {
            (0..CALIBRATION_CONTEXTS)
                .map(|_| (rng.below(v), rng.below(v)))
                .collect()
        }
    }

    fn compute(&self, c2: usize, c1: usize) -> Vec<f64> {
        let v = self.vocab;
        let u = &self.u[c1 * v..(c1 + 1) * v];
        let w = &self.w[c2 * v..(c2 + 1) * v];
        let logits: Vec<f64> = u.iter().zip(w).map(|(a, b)| self.sharpness * (a + b)).collect();
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    /// Next-token distribution after `(c2, c1)`, where `c1` is the most recent token.
    pub fn conditional(&self, c2: usize, c1: usize) -> Vec<f64> {
        match &self.table {
            Some(t) => {
                let v = self.vocab;
                let at = (c2 * v + c1) * v;
                t[at..at + v].to_vec()
            }
            None => self.compute(c2, c1),
        }
    }

    /// Mean entropy (nats) over all contexts, weighted uniformly.
    pub fn mean_context_entropy(&self) -> f64 {
        let v = self.vocab;
        let mut total = 0.0;
        for c2 in 0..v {
            for c1 in 0..v {
                total += entropy(&self.conditional(c2, c1));
            }
        }
        total / (v * v) as f64
    }

    /// Draws `length` tokens; the first two are uniform.
    pub fn sample(&self, length: usize, rng: &mut Rng) -> Vec<u16> {
        let mut out = Vec::with_capacity(length);
        for i in 0..length {
            let t = if i < 2 {
                rng.below(self.vocab)
            } else {
                let p = self.conditional(out[i - 2] as usize, out[i - 1] as usize);
                let mut x = rng.uniform();
                let mut pick = self.vocab - 1;
                for (k, &pk) in p.iter().enumerate() {
                    if x < pk {
                        pick = k;
                        break;
                    }
                    x -= pk;
                }
                pick
            };
            out.push(t as u16);
        }
        out
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Token stream drawn from the order-2 source built for `(seed, vocab)`.
pub fn synth_corpus(seed: u64, vocab: usize, length: usize) -> Result<Vec<u16>> {
    let source = MarkovSource::new(seed, vocab)?;
    Ok(source.sample(length, &mut Rng::for_site(seed, "corpus.stream")))
}

/// Binary token cache: `"SPTK"`, version `u16`, vocab `u16`, then
/// little-endian `u16` ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenFile {
    pub vocab: u16,
    pub tokens: Vec<u16>,
}

impl TokenFile {
    pub const MAGIC: &'static [u8; 4] = b"SPTK";
    pub const VERSION: u16 = 1;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 2 * self.tokens.len());
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        out.extend_from_slice(&self.vocab.to_le_bytes());
        for t in &self.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != Self::MAGIC {
            return Err(Error::Parse("token file lacks the SPTK header".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != Self::VERSION {
            return Err(Error::Parse(format!("unsupported token file version {version}")));
        }
        let vocab = u16::from_le_bytes([bytes[6], bytes[7]]);
        let body = &bytes[8..];
        if !body.len().is_multiple_of(2) {
            return Err(Error::Parse("token file body has odd length".into()));
        }
        let tokens: Vec<u16> = body
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        if let Some((i, t)) = tokens.iter().enumerate().find(|(_, &t)| t >= vocab) {
            return Err(Error::Parse(format!("token {t} at position {i} exceeds vocabulary {vocab}")));
        }
        Ok(Self { vocab, tokens })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a = synth_corpus(7, 64, 100_000).unwrap();
        let b = synth_corpus(7, 64, 100_000).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_corpus(8, 64, 100_000).unwrap());
        assert!(a.iter().all(|&t| t < 64));
    }

    #[test]
    fn entropy_is_calibrated() {
        for v in [4, 16, 64] {
            let s = MarkovSource::new(1, v).unwrap();
            let h = s.mean_context_entropy();
            assert!((h - 0.6 * (v as f64).ln()).abs() < 1e-9, "vocab {v}: {h}");
        }
    }

    /// Stationary distribution over (c2, c1) pairs by iterating the pair chain.
    fn stationary_pairs(src: &MarkovSource) -> Vec<f64> {
        let v = src.vocab();
        let mut pi = vec![1.0 / (v * v) as f64; v * v];
        for _ in 0..500 {
            let mut next = vec![0.0; v * v];
            for c2 in 0..v {
                for c1 in 0..v {
                    let p = src.conditional(c2, c1);
                    for (x, px) in p.iter().enumerate() {
                        next[c1 * v + x] += pi[c2 * v + c1] * px;
                    }
                }
            }
            pi = next;
        }
        pi
    }

    #[test]
    fn empirical_bigram_conditionals_converge() {
        let v = 8;
        let src = MarkovSource::new(3, v).unwrap();
        let pi = stationary_pairs(&src);
        let stream = src.sample(1_000_000, &mut Rng::new(4));
        let mut counts = vec![0usize; v * v];
        for w in stream.windows(2) {
            counts[w[0] as usize * v + w[1] as usize] += 1;
        }
        for c1 in 0..v {
            // P(x | c1) = Σ_c2 π(c2, c1)·P(x | c2, c1) / Σ_c2 π(c2, c1)
            let mut expected = vec![0.0; v];
            let mut mass = 0.0;
            for c2 in 0..v {
                let w = pi[c2 * v + c1];
                mass += w;
                for (e, p) in expected.iter_mut().zip(src.conditional(c2, c1)) {
                    *e += w * p;
                }
            }
            let row = &counts[c1 * v..(c1 + 1) * v];
            let n: usize = row.iter().sum();
            let tv: f64 = 0.5
                * row
                    .iter()
                    .zip(&expected)
                    .map(|(&c, &q)| (c as f64 / n as f64 - q / mass).abs())
                    .sum::<f64>();
            assert!(tv <= 0.02, "previous token {c1}: tv {tv}");
        }
    }

    #[test]
    fn order_two_predictor_beats_unigram() {
        let src = MarkovSource::new(5, 16).unwrap();
        let mut rng = Rng::new(6);
        let train = src.sample(200_000, &mut rng);
        let held = src.sample(50_000, &mut rng);
        let mut freq = [1.0; 16];
        for &t in &train {
            freq[t as usize] += 1.0;
        }
        let total: f64 = freq.iter().sum();
        let (mut ce0, mut ce2) = (0.0, 0.0);
        for w in held.windows(3) {
            ce0 -= (freq[w[2] as usize] / total).ln();
            ce2 -= src.conditional(w[0] as usize, w[1] as usize)[w[2] as usize].ln();
        }
        assert!(ce2 < ce0, "order-2 {ce2} vs order-0 {ce0}");
    }

    #[test]
    fn token_file_round_trip_and_rejections() {
        let f = TokenFile {
            vocab: 64,
            tokens: synth_corpus(1, 64, 1000).unwrap(),
        };
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"SPTK");
        assert_eq!(bytes.len(), 8 + 2000);
        assert_eq!(TokenFile::from_bytes(&bytes).unwrap(), f);
        assert!(TokenFile::from_bytes(b"NOPE\x01\x00\x40\x00").is_err());
        let mut bad = bytes.clone();
        bad[8] = 200;
        assert!(TokenFile::from_bytes(&bad).is_err());
        assert!(TokenFile::from_bytes(&bytes[..9]).is_err());
    }

    #[test]
    fn tiny_vocab_is_rejected() {
        assert!(synth_corpus(1, 1, 10).is_err());
    }
}
