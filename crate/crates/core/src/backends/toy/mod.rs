//! Deterministic desk-scale stand-ins for every backend role.
//!
//! All toy backends are pure functions of their inputs and construction
//! arguments, so repeated calls are bit-identical and they can be shared
//! freely between worker threads.

mod captioner;
mod classifier;
mod embedder;
mod encoder;
mod generator;
mod perturber;

pub use captioner::ToyCaptioner;
pub use classifier::ToyClassifier;
pub use embedder::{BagOfWordsEmbedder, DEFAULT_DIM as EMBEDDER_DIM};
pub use encoder::ToyJointEncoder;
pub use generator::AffineToyGenerator;
pub use perturber::LexiconPerturber;
