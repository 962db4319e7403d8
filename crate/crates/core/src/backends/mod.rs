//! Narrow interfaces for every external model the framework talks to, plus
//! deterministic toy implementations and an out-of-process adapter.
//!
//! Six roles exist: captioner, caption perturber, sentence embedder, joint
//! image-text encoder, diffusion generator and classifier. Each role is a
//! trait; the pipeline only ever sees trait objects.

mod lexicon;
mod registry;
pub mod stdio;
pub mod toy;
mod types;

pub use lexicon::{color_distance, subject_color, Concept, Lexicon, Region, SceneLayout, SCENE_GROUPS};
pub use registry::{BackendSpec, Backends, BackendsConfig, ClassifierBackend};
pub use types::{
    BackendDescriptor, BackendKind, EmbeddingVector, ImageTensor, LatentVector, ScoreVector,
};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::perturbation::VariationFactor;
use crate::reinforcement::ParameterSet;

/// Image captioner.
pub trait Captioner: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Produces a caption with at least `min_words` whitespace-separated words.
    fn caption(&self, image: &ImageTensor, min_words: usize, repetition_penalty: f64)
        -> Result<String>;
}

/// Caption perturber: rewrites a caption along one variation factor.
pub trait Perturber: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Returns up to `max_edits` rewritten captions, most preferred first.
    fn perturb(&self, caption: &str, factor: VariationFactor, max_edits: usize)
        -> Result<Vec<String>>;
}

/// Sentence embedder used for the semantic-similarity filter.
pub trait SentenceEmbedder: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

/// Joint image-text encoder used by the directional metric.
pub trait JointEncoder: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    fn encode_image(&self, image: &ImageTensor) -> Result<EmbeddingVector>;
    fn encode_text(&self, text: &str) -> Result<EmbeddingVector>;
}

/// Encodes an image and a text with the same encoder, checking that both
/// branches land in the same space.
pub fn encode_pair(
    encoder: &dyn JointEncoder,
    image: &ImageTensor,
    text: &str,
) -> Result<(EmbeddingVector, EmbeddingVector)> {
    if text.trim().is_empty() {
        return Err(Error::invalid("text", "must be nonempty"));
    }
    let img = encoder.encode_image(image)?;
    let txt = encoder.encode_text(text)?;
    if img.dim() != txt.dim() {
        return Err(Error::DimensionMismatch {
            expected: img.dim(),
            actual: txt.dim(),
        });
    }
    Ok((img, txt))
}

/// Latent diffusion generator seen through a single deterministic sampling
/// step and its inverse.
///
/// `denoise_step` maps `z_k` to `z_{k-1}` under classifier-free guidance with
/// an explicit unconditional (null-text) embedding. `null_jvp` / `null_vjp`
/// expose the step's Jacobian with respect to that null embedding, which is
/// all the null-text optimizer needs.
pub trait Generator: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Encodes an image into the latent `z_0` (timestep 0).
    fn encode_image(&self, image: &ImageTensor) -> Result<LatentVector>;

    /// Decodes a latent back into an image with the geometry of `like`.
    fn decode_latent(&self, z: &LatentVector, like: &ImageTensor, id: &str)
        -> Result<ImageTensor>;

    /// Conditioning embedding of a caption.
    fn embed_caption(&self, text: &str) -> Result<EmbeddingVector>;

    /// Embedding of the empty prompt; the starting point for null-text tuning.
    fn null_embedding(&self) -> EmbeddingVector;

    fn denoise_step(
        &self,
        z: &LatentVector,
        k: usize,
        text_embedding: &EmbeddingVector,
        null_embedding: &EmbeddingVector,
        guidance_scale: f64,
    ) -> Result<LatentVector>;

    /// One deterministic inversion step `z_{k-1} -> z_k`, conditional branch only.
    fn invert_step(
        &self,
        z_prev: &LatentVector,
        k: usize,
        text_embedding: &EmbeddingVector,
    ) -> Result<LatentVector>;

    /// Directional derivative of `denoise_step` along `tangent` in null space.
    fn null_jvp(
        &self,
        z: &LatentVector,
        k: usize,
        text_embedding: &EmbeddingVector,
        null_embedding: &EmbeddingVector,
        guidance_scale: f64,
        tangent: &[f64],
    ) -> Result<Vec<f64>>;

    /// Transposed Jacobian of `denoise_step` (w.r.t. the null embedding)
    /// applied to a latent-space cotangent.
    fn null_vjp(
        &self,
        z: &LatentVector,
        k: usize,
        text_embedding: &EmbeddingVector,
        null_embedding: &EmbeddingVector,
        guidance_scale: f64,
        cotangent: &[f64],
    ) -> Result<Vec<f64>>;
}

/// Image classifier under test.
pub trait Classifier: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    fn class_names(&self) -> Result<&[String]>;
    fn classify(&self, image: &ImageTensor) -> Result<ScoreVector>;

    fn class_index(&self, class: &str) -> Result<usize> {
        self.class_names()?
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }
}

/// A classifier whose parameters can be read, replaced and differentiated.
pub trait TrainableClassifier: Classifier {
    fn parameters(&self) -> ParameterSet;

    fn set_parameters(&mut self, params: ParameterSet) -> Result<()>;

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every head group. Non-head groups are never differentiated.
    fn head_loss_and_gradient(
        &self,
        batch: &[(&ImageTensor, usize)],
    ) -> Result<(f64, BTreeMap<String, Vec<f64>>)>;
}
