//! Interaction order prediction on temporal graphs.
//!
//! The pipeline runs from raw timestamped edge lists ([`graph`]) through
//! clique mining ([`motif`]) and the permutation label space ([`seqspace`])
//! to the models ([`models`], built on [`nn`]), metrics ([`metrics`]) and
//! the experiment harness ([`harness`]).

pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod motif;
pub mod nn;
pub mod seqspace;

pub use error::{IopError, Result};
