//! Counterfactual stress tests and head-only reinforcement for image classifiers.

pub mod augment;
pub mod backends;
pub mod config;
pub mod editing;
pub mod error;
pub mod evaluation;
pub mod imageio;
pub mod perturbation;
pub mod pipeline;
pub mod reinforcement;
pub mod report;
pub mod synthetic;
pub mod util;

pub use error::{Error, Result};
