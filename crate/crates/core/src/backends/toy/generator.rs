use crate::backends::lexicon::{Lexicon, SceneLayout};
use crate::backends::{
    BackendDescriptor, BackendKind, EmbeddingVector, Generator, ImageTensor, LatentVector,
};
use crate::error::{Error, Result};
use crate::util::{self, is_stopword};

const UNKNOWN_AMPLITUDE: f64 = 0.03;

/// Affine stand-in for a latent diffusion sampler.
///
/// The latent is the image itself. Step `k` with guidance `w` is
///
/// ```text
/// z_{k-1} = a_k z_k + b_k ∅ + d_k c,   b_k = η_k (1 - w),   d_k = η_k w
/// ```
///
/// which is classifier-free guidance over an affine noise predictor. The
/// inversion step uses the conditional branch only and divides by
/// `a_k (1 + δ)`; a nonzero mismatch `δ` leaves a gap that null-text tuning
/// has to close, as with a real sampler.
///
/// Captions embed into latent space: every lexicon phrase paints its colour
/// over its region, other content words add a small hashed pattern.
#[derive(Clone, Debug)]
pub struct AffineToyGenerator {
    shape: (usize, usize, usize),
    steps: Vec<(f64, f64)>,
    inversion_mismatch: f64,
    lexicon: Lexicon,
    seed: u64,
}

impl AffineToyGenerator {
    /// `steps[k - 1] = (a_k, η_k)`.
    pub fn new(shape: (usize, usize, usize), steps: Vec<(f64, f64)>) -> Result<Self> {
        let (c, h, w) = shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::invalid("latent shape", "empty axis"));
        }
        if steps.is_empty() {
            return Err(Error::invalid("steps", "need at least one step"));
        }
        for (i, (a, eta)) in steps.iter().enumerate() {
            if *a == 0.0 || !a.is_finite() {
                return Err(Error::invalid("a_k", format!("step {} has a = {a}", i + 1)));
            }
            if *eta == 0.0 || !eta.is_finite() {
                return Err(Error::invalid("b_k", format!("step {} has eta = {eta}", i + 1)));
            }
        }
        Ok(AffineToyGenerator {
            shape,
            steps,
            inversion_mismatch: 0.0,
            lexicon: Lexicon::standard(),
            seed: 0,
        })
    }

    /// Identity dynamics (`a = 1`) whose conditioning moves the latent by
    /// `edit_gain` caption patterns over a full pass at guidance `guidance`.
    pub fn for_editing(
        shape: (usize, usize, usize),
        k: usize,
        edit_gain: f64,
        guidance: f64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K", "must be at least 1"));
        }
        if guidance == 0.0 || guidance == 1.0 {
            return Err(Error::invalid("guidance_scale", format!("{guidance} makes b or d vanish")));
        }
        let eta = edit_gain / (guidance * k as f64);
        Self::new(shape, vec![(1.0, eta); k])
    }

    pub fn with_inversion_mismatch(mut self, delta: f64) -> Self {
        self.inversion_mismatch = delta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    /// `(a_k, b_k, d_k)` for step `k` at guidance `w`.
    pub fn coefficients(&self, k: usize, guidance: f64) -> Result<(f64, f64, f64)> {
        if k == 0 {
            return Err(Error::TimestepExhausted);
        }
        let (a, eta) = *self
            .steps
            .get(k - 1)
            .ok_or_else(|| Error::invalid("k", format!("{k} > K = {}", self.steps.len())))?;
        let b = eta * (1.0 - guidance);
        if b == 0.0 {
            return Err(Error::invalid("b_k", "guidance scale 1 zeroes the null-text term"));
        }
        Ok((a, b, eta * guidance))
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim(),
                actual: len,
            });
        }
        Ok(())
    }

    fn check_step_input(&self, z: &LatentVector, k: usize, parts: &[&[f64]]) -> Result<()> {
        if k == 0 {
            return Err(Error::TimestepExhausted);
        }
        if z.timestep != k {
            return Err(Error::invalid(
                "latent",
                format!("timestep {} fed to step {k}", z.timestep),
            ));
        }
        self.check_dim(z.dim())?;
        for p in parts {
            self.check_dim(p.len())?;
        }
        Ok(())
    }
}

impl Generator for AffineToyGenerator {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Generator,
            name: "affine-toy-generator".into(),
            deterministic: true,
            seed: self.seed,
            output_dim: Some(self.latent_dim()),
        }
    }

    fn encode_image(&self, image: &ImageTensor) -> Result<LatentVector> {
        if image.shape() != self.shape {
            return Err(Error::ShapeMismatch(format!(
                "generator expects {:?}, image `{}` is {:?}",
                self.shape,
                image.id(),
                image.shape()
            )));
        }
        LatentVector::new(image.data().to_vec(), 0)
    }

    fn decode_latent(&self, z: &LatentVector, like: &ImageTensor, id: &str) -> Result<ImageTensor> {
        self.check_dim(z.dim())?;
        let (c, h, w) = like.shape();
        if c * h * w != z.dim() {
            return Err(Error::ShapeMismatch(format!(
                "latent of {} values cannot take shape {:?}",
                z.dim(),
                like.shape()
            )));
        }
        ImageTensor::from_clamped(id, c, h, w, z.data.clone())
    }

    fn embed_caption(&self, text: &str) -> Result<EmbeddingVector> {
        let (c, h, w) = self.shape;
        let mut v = vec![0.0; self.latent_dim()];
        let tokens = util::tokenize(text);
        for (concept, words) in self.lexicon.segment(&tokens) {
            let pattern = match concept {
                Some(i) => {
                    let con = &self.lexicon.concepts()[i];
                    SceneLayout::region_pattern(c, h, w, con.region, con.color)
                }
                None if !is_stopword(&words[0]) => {
                    util::hashed_vector(&words[0], self.seed, v.len(), UNKNOWN_AMPLITUDE)
                }
                None => continue,
            };
            for (x, p) in v.iter_mut().zip(pattern) {
                *x += p;
            }
        }
        EmbeddingVector::new(v)
    }

    fn null_embedding(&self) -> EmbeddingVector {
        EmbeddingVector::zeros(self.latent_dim())
    }

    fn denoise_step(
        &self,
        z: &LatentVector,
        k: usize,
        text_embedding: &EmbeddingVector,
        null_embedding: &EmbeddingVector,
        guidance_scale: f64,
    ) -> Result<LatentVector> {
        self.check_step_input(z, k, &[&text_embedding.data, &null_embedding.data])?;
        let (a, b, d) = self.coefficients(k, guidance_scale)?;
        let data = z
            .data
            .iter()
            .zip(&null_embedding.data)
            .zip(&text_embedding.data)
            .map(|((zi, ni), ci)| a * zi + b * ni + d * ci)
            .collect();
        LatentVector::new(data, k - 1)
    }

    fn invert_step(
        &self,
        z_prev: &LatentVector,
        k: usize,
        text_embedding: &EmbeddingVector,
    ) -> Result<LatentVector> {
        if k == 0 {
            return Err(Error::TimestepExhausted);
        }
        if z_prev.timestep + 1 != k {
            return Err(Error::invalid(
                "latent",
                format!("timestep {} fed to inversion step {k}", z_prev.timestep),
            ));
        }
        self.check_dim(z_prev.dim())?;
        self.check_dim(text_embedding.dim())?;
        let (a, eta) = *self
            .steps
            .get(k - 1)
            .ok_or_else(|| Error::invalid("k", format!("{k} > K = {}", self.steps.len())))?;
        let scale = a * (1.0 + self.inversion_mismatch);
        let data = z_prev
            .data
            .iter()
            .zip(&text_embedding.data)
            .map(|(z, c)| (z - eta * c) / scale)
            .collect();
        LatentVector::new(data, k)
    }

    fn null_jvp(
        &self,
        z: &LatentVector,
        k: usize,
        text_embedding: &EmbeddingVector,
        null_embedding: &EmbeddingVector,
        guidance_scale: f64,
        tangent: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_step_input(z, k, &[&text_embedding.data, &null_embedding.data, tangent])?;
        let (_, b, _) = self.coefficients(k, guidance_scale)?;
        Ok(tangent.iter().map(|t| b * t).collect())
    }

    fn null_vjp(
        &self,
        z: &LatentVector,
        k: usize,
        text_embedding: &EmbeddingVector,
        null_embedding: &EmbeddingVector,
        guidance_scale: f64,
        cotangent: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_step_input(z, k, &[&text_embedding.data, &null_embedding.data, cotangent])?;
        let (_, b, _) = self.coefficients(k, guidance_scale)?;
        Ok(cotangent.iter().map(|t| b * t).collect())
    }
}
