//! Desk-scale laboratory for reward-conditioned group-relative policy
//! optimization on simulated multi-turn tool-calling worlds.
//!
//! The crate provides:
//! - [`env`]: deterministic miniature tool-calling environments;
//! - [`reward`]: the binary trajectory reward (state consistency times
//!   essential-action coverage) and its token quantization;
//! - [`policy`]: a featurized categorical policy conditioned on a reward
//!   token, with exact log-probabilities, entropy, KL, and analytic
//!   gradients;
//! - [`rctp`]: stage-1 data curation and maximum-likelihood finetuning of
//!   the reward-conditioned policy (plus the unconditioned SFT baseline);
//! - [`rl`]: stage-2 group-relative policy optimization, with or without
//!   reward-conditioned rollouts;
//! - [`theory`]: Monte Carlo verifiers for the variance-collapse and
//!   variance-guarantee bounds;
//! - [`metrics`]: training-dynamics diagnostics and windowed summaries.

pub mod env;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod rctp;
pub mod reward;
pub mod rl;
pub mod theory;

pub use error::{Error, Result};
