//! Hidden Markov models with sparse state labels.
//!
//! This crate fits, decodes, and evaluates hidden Markov models in which a
//! small subset of time indices carries (possibly noisy) state labels. The
//! contribution of unlabelled data to the likelihood is down-weighted by a
//! tunable exponent, which interpolates between treating unlabelled
//! observations as missing and using the ordinary joint likelihood.
//!
//! Modules:
//! - [`distributions`]: emission families and label observation models
//! - [`markov`]: chain parameters, forward/backward, Viterbi, mixtures
//! - [`weighting`]: likelihood weight schemes for labelled/unlabelled indices
//! - [`model`]: bundled model parameters and constraint declarations
//! - [`estimate`]: constrained maximum likelihood via quasi-Newton ascent
//! - [`evaluate`]: cross-validation splits and classification metrics
//! - [`featurize`]: dive segmentation and per-window summary statistics
//! - [`simulate`]: synthetic data generation and brute-force reference
//!   implementations used to validate the fast recursions
//! - [`io`]: file formats for datasets, model configs, and reports

pub mod distributions;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod featurize;
pub mod io;
mod linalg;
pub mod markov;
pub mod model;
pub mod simulate;
pub mod weighting;

pub use error::{Error, Result};
