//! Bellwether moving-window selection for software effort estimation.
//!
//! The pipeline sorts completed projects chronologically, chooses a number
//! of strata with X-means, checks that candidate windows have an ergodic
//! project-age chain, and hill-climbs to the window whose model predicts
//! the other windows best. The result is compared against leave-one-out
//! training on every project (the growing portfolio).

pub mod error;
pub mod dataset;
pub mod linalg;
pub mod stats;
pub mod stratify;
pub mod markov;
pub mod weighting;
pub mod learners;
pub mod metrics;
pub mod bellwether;
pub mod pipeline;
pub mod synthetic;

pub use error::{Error, Result, Stage};
