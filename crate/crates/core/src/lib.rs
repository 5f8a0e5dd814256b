//! Discrete Bayesian factor graphs in normal (Forney) form.
//!
//! Variables live on directed edges, diverters replicate a variable across
//! several edges, and SISO blocks carry row-stochastic conditional matrices
//! `θ = P(Y|X)`. On cycle-free graphs the sum-product rules give exact
//! posteriors, and every trainable block can be re-estimated from the
//! forward/backward messages that reach it with one of four local rules:
//!
//! | rule | kind | update |
//! |------|------|--------|
//! | [`Algorithm::Ml`]  | iterative | multiplicative KKT step on `Σ log(fᵀθb)` |
//! | [`Algorithm::Kl`]  | iterative | multiplicative step on `Σ KL(b ‖ θᵀf)` |
//! | [`Algorithm::Vit`] | batch     | counts of argmax-sharpened messages |
//! | [`Algorithm::Var`] | batch     | soft counts `α + δ + Σ f bᵀ` |
//!
//! The [`experiments`] module reproduces the synthetic single-block,
//! latent-tree and deep-graph studies; the `normalgraph` binary wraps it.

// NaN must fail the positivity checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod learning;
pub mod matrix;
pub mod messages;
pub mod propagation;
pub mod synthgen;

pub use error::{Error, Result};
pub use graph::{build_expander, build_projector, GraphSpec, SisoBlock, SourceBlock};
pub use learning::{
    em_train, kl_update, ml_update, train_block, var_update, vit_update, Algorithm, BlockDataset,
    TrainConfig, TrainReport,
};
pub use matrix::Matrix;
pub use messages::{Alphabet, Distribution, MessagePair};
pub use propagation::{propagate, Evidence, MessageState, Network, Observation};
