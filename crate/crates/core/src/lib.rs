//! Preference-conditioned, surrogate-assisted bi-objective strategy search.
//!
//! A small strategy network maps a trade-off request `λ = (λ₁, 1 − λ₁)` to a
//! strategy vector `x ∈ [0,1]^d`. The expensive objective `f₂` is replaced by
//! a Gaussian-process surrogate whose input gradient drives the network update
//! through a weighted Tchebycheff scalarization, and the surrogate dataset is
//! grown each epoch by greedy hypervolume-improvement selection.
//!
//! Module map:
//!
//! * [`domain`]: strategies, requests, objective pairs, the size objective.
//! * [`evaluators`]: black-box objectives, the evaluation ledger, brute-force fronts.
//! * [`gp`]: Matérn 5/2 regression, hyperparameter fitting, acquisition.
//! * [`scalarize`]: weighted sum, Tchebycheff and PBI scalarizations.
//! * [`stratnet`]: the request-to-strategy MLP with manual backprop and Adam.
//! * [`pareto`]: 2-D hypervolume, HVI and greedy batch selection.
//! * [`trainer`]: the alternating training loop, checkpoints and metrics.
//! * [`cli`]: the `prefopt` command surface.

#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod codec;
pub mod domain;
pub mod error;
pub mod evaluators;
pub mod gp;
pub mod pareto;
pub mod scalarize;
pub mod stratnet;
pub mod trainer;

pub use error::{Error, Result};
