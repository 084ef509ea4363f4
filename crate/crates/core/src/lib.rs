//! Exact and Monte Carlo audit of reverse-KL estimators (K1, K3) and of where
//! they enter a policy-gradient update (reward, loss, or both).
//!
//! The testbed is a two-parameter autoregressive Bernoulli model whose
//! conditionals depend on the prefix only through the running count of ones.
//! That makes every expectation of interest computable exactly, either by a
//! count-state dynamic program or by enumerating all `2^T` sequences, so each
//! Monte Carlo quantity has an oracle to be checked against.
//!
//! The crate is `no_std` (it needs `alloc`). IO, CSV emission and the CLI live
//! in the companion `klgrad` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod enumeration;
pub mod error;
pub mod estimators;
pub mod gradient_lab;
pub mod model;
pub mod seed;
pub mod trainer;

mod math;

pub use error::{Error, Result};
pub use estimators::{EstimatorKind, McEstimate, TokenRatios};
pub use gradient_lab::{BiasVarianceReport, GradEstimate, KlPlacement, SweepSpec};
pub use model::{ArParams, Conditionals, CountDistribution, SequenceSample};
