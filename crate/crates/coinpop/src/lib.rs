//! Adaptive estimation of the fraction of "positive" coins in a population of
//! noisy coins.
//!
//! The crate covers the whole pipeline: seeded coin populations, stopping
//! rules on the Pascal triangle, the triangular-walk and refined-sampling
//! estimators, budgeted execution, LP-designed estimators for known bias
//! distributions, and exact Hellinger/KL checks on small instances.

// `!(x >= 0.0)` is used on purpose so NaN is rejected; dense tableau code
// indexes several arrays by the same loop variable.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod budget;
pub mod coin_model;
pub mod design_opt;
pub mod estimators;
pub mod harness;
pub mod math;
pub mod refined;
pub mod walk_core;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bias distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid population: {0}")]
    InvalidPopulation(String),
    #[error("invalid stopping rule: {0}")]
    InvalidRule(String),
    #[error("ballot survival needs a heads majority, got n={n}, k={k}")]
    NoHeadsMajority { n: usize, k: usize },
    #[error("estimator cannot distinguish the two populations")]
    Indistinguishable,
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("distributions have different supports ({0} vs {1})")]
    SupportMismatch(usize, usize),
    #[error("invalid distribution: {0}")]
    InvalidFinite(String),
    #[error("epsilon {eps} must be smaller than rho {rho}")]
    EpsilonTooLarge { eps: f64, rho: f64 },
    #[error("empty tally: no outcome completed within budget")]
    EmptyTally,
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
