//! Movie description from weak sentence annotations.
//!
//! The pipeline mines visual labels from parsed sentence annotations,
//! trains one-vs-all linear classifiers per semantic group (verbs, objects,
//! places) on group-specific feature channels, keeps the classifiers that
//! generalize, and feeds their concatenated scores to an LSTM that
//! generates the description. Caption metrics and a difficulty-analysis
//! toolkit sit alongside.

pub mod analysis;
pub mod classifiers;
pub mod corpus;
pub mod error;
pub mod io;
pub mod lstm;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
