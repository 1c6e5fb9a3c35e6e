//! Temporal linear item-item sequential recommender.

pub mod analysis;
pub mod augment;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod oracle;
pub mod solver;
pub mod train;
pub mod weighting;

pub use error::{Error, Result};
