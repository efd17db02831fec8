//! Desk-scale factorized transformer: autodiff tape, model, spectral
//! initialization, the self-guided baseline layer and a synthetic corpus.

pub mod corpus;
mod init;
mod model;
mod self_guided;
pub mod tape;

pub use corpus::{synth_corpus, MarkovSource, TokenFile};
pub use init::{factorize_truncated, spectral_init};
pub use model::{
    Block, DenseLinear, FactorizedLinear, Forward, Gradients, Model, ModelConfig, ProjGrad,
    Projection, TokenBatch,
};
pub use self_guided::{guidance_alpha, SelfGuidedLinear};
pub use tape::{NodeId, Tape};
