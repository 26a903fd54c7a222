//! Screening-pipeline toolkit.
//!
//! Builds short-form behavioural screeners from item-level instrument score
//! sheets: answer-code encoding (one-hot, severity levels, behaviour
//! presence), bootstrapped feature selection, age-siloed weighted random
//! forests, inconclusive-band calibration, presence-feature augmentation and
//! logistic fusion of two screeners. A synthetic score-sheet generator with
//! planted signal stands in for clinical data in tests and benchmarks.

pub mod data;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod learners;
pub mod pipeline;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
