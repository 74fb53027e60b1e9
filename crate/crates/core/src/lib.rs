//! Bayesian decision-tree model averaging, randomized decision-tree ensembles
//! and the uncertainty-envelope evaluation used to compare them.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: datasets, CSV ingestion, stratified folds and validation splits.
//! - [`synth`]: the five-Gaussian two-class benchmark and its Bayes-optimal rule.
//! - [`tree`]: the binary axis-parallel tree shared by both techniques.
//! - [`mcmc`]: reversible-jump Metropolis-Hastings over trees with restarts.
//! - [`forest`]: randomized top-k information-gain tree ensembles.
//! - [`envelope`]: consistency, CC/CI/U outcomes, fold aggregation and sweeps.
//! - [`bench`]: experiment configuration, protocols and report emission.

pub mod bench;
pub mod data;
pub mod envelope;
pub mod error;
pub mod forest;
pub mod mcmc;
pub mod rng;
pub mod synth;
pub mod tree;

pub use error::{Error, Result};
