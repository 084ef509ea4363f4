//! Experiment plumbing around `klgrad-core`: seeded run records, CSV result
//! files, parallel drivers for the bias/variance sweep, and the `klgrad` CLI.

pub mod config;
pub mod error;
pub mod experiments;
pub mod run_store;

pub use error::{Error, Result};
