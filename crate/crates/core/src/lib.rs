//! Innovation-index pipeline.
//!
//! Trains a seeded random-forest regressor on country indicator panels,
//! decomposes each prediction into an additive baseline plus per-metric
//! contributions along the decision paths, clusters samples by their
//! contribution vectors, and produces largest-differing-contribution
//! comparison reports.

pub mod analysis;
pub mod attribution;
pub mod cli;
pub mod clustering;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod seeding;
pub mod synth;

pub use error::{Error, Result};
