//! Hypergraph information bottleneck (HGIB) learning.
//!
//! Multi-modal feature tables become a hypergraph of kNN hyperedges; a stack of
//! spatial hypergraph convolutions is trained with cross-entropy, focal loss and
//! a per-layer information-bottleneck penalty, then scored with one-vs-rest AUC
//! and predictive values, optionally under structure or feature attacks.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod hypergraph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod seeds;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};
