//! Neural referring-expression generation.
//!
//! Given an entity and the delexicalized text around its mention, a
//! bidirectional-LSTM encoder and an attentive LSTM decoder produce the
//! referring expression (a name, a pronoun or a description). The crate also
//! ships the supporting pieces: a reverse-mode autodiff engine, a
//! deterministic synthetic corpus, beam search, training with early stopping,
//! evaluation metrics and two rule-based baselines.

pub mod baselines;
#[cfg(feature = "cli")]
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
