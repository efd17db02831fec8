//! Training natively low-rank factorized networks with spectrally
//! renormalized, orthogonalized factor updates.
//!
//! Every non-embedding weight is stored as `W = A·Bᵀ` and trained through its
//! factors. The optimizer bounds the spectral norm of the induced update
//! `ΔW = ΔA·Bᵀ + A·ΔBᵀ + ΔA·ΔBᵀ` by the learning rate: each factor step is an
//! orthogonalized momentum matrix scaled by `η / (‖A‖₂ + ‖B‖₂ + 1)`.
//!
//! The crate is organized bottom-up:
//!
//! - [`matrix`], [`svd`], [`rng`]: dense kernels, the Jacobi SVD oracle, seeded streams.
//! - [`spectral`]: Newton-Schulz orthogonalization and power iteration.
//! - [`optim`]: the factorized optimizer and its ablation baselines.
//! - [`net`]: a desk-scale factorized transformer with reverse-mode autodiff.
//! - [`telemetry`]: per-step spectral diagnostics.
//! - [`scaling`]: IsoFLOP and parametric scaling-law fits.
//! - [`run`]: reproducible training, ablation, fitting and tracing runs.
//! - [`cli`]: the command-line front end over [`run`].
//!
//! Runnable walkthroughs live in `examples/`; `cargo run --example` lists them.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod matrix;
pub mod net;
pub mod optim;
pub mod rng;
pub mod run;
pub mod scaling;
pub mod spectral;
pub mod svd;
pub mod svg;
pub mod telemetry;
pub mod train;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
pub use rng::Rng;
