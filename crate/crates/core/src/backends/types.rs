use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// A `(channels, height, width)` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    id: String,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(
        id: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let img = ImageTensor {
            id: id.into(),
            channels,
            height,
            width,
            data,
        };
        img.validate()?;
        Ok(img)
    }

    /// Builds an image, clamping every value into `[0, 1]` first.
    pub fn from_clamped(
        id: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        mut data: Vec<f64>,
    ) -> Result<Self> {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(id, channels, height, width, data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid(
                "image",
                format!(
                    "shape ({}, {}, {}) has an empty axis",
                    self.channels, self.height, self.width
                ),
            ));
        }
        let expected = self.channels * self.height * self.width;
        if self.data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "image `{}` has {} values for shape ({}, {}, {})",
                self.id,
                self.data.len(),
                self.channels,
                self.height,
                self.width
            )));
        }
        if let Some(v) = self
            .data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::invalid(
                "image",
                format!("`{}` has value {v} outside [0, 1]", self.id),
            ));
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }
}

/// A diffusion latent tagged with its timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub data: Vec<f64>,
    pub timestep: usize,
}

impl LatentVector {
    pub fn new(data: Vec<f64>, timestep: usize) -> Result<Self> {
        if !util::all_finite(&data) {
            return Err(Error::invalid("latent", "non-finite value"));
        }
        Ok(LatentVector { data, timestep })
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub data: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if !util::all_finite(&data) {
            return Err(Error::invalid("embedding", "non-finite value"));
        }
        Ok(EmbeddingVector { data })
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector {
            data: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        util::norm(&self.data)
    }

    pub fn sub(&self, other: &EmbeddingVector) -> Result<EmbeddingVector> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(EmbeddingVector {
            data: util::sub(&self.data, &other.data),
        })
    }
}

/// Classifier output: one score per class, aligned with `class_names`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub class_names: Vec<String>,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, class_names: Vec<String>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("scores", "need at least one class"));
        }
        if scores.len() != class_names.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for {} classes",
                scores.len(),
                class_names.len()
            )));
        }
        if !util::all_finite(&scores) {
            return Err(Error::invalid("scores", "non-finite score"));
        }
        Ok(ScoreVector {
            scores,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Captioner,
    Perturber,
    SentenceEmbedder,
    JointEncoder,
    Generator,
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub name: String,
    pub deterministic: bool,
    pub seed: u64,
    /// Length of the vectors the backend emits, where that is fixed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dim: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range_and_bad_shapes() {
        assert!(ImageTensor::new("a", 1, 1, 1, vec![0.5]).is_ok());
        assert!(ImageTensor::new("a", 1, 1, 1, vec![1.5]).is_err());
        assert!(ImageTensor::new("a", 1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ImageTensor::new("a", 0, 1, 1, vec![]).is_err());
        assert!(matches!(
            ImageTensor::new("a", 1, 2, 2, vec![0.0; 3]),
            Err(Error::ShapeMismatch(_))
        ));
        let img = ImageTensor::from_clamped("b", 1, 1, 2, vec![-1.0, 2.0]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn score_vector_contract() {
        assert!(ScoreVector::new(vec![], vec![]).is_err());
        assert!(ScoreVector::new(vec![1.0], vec!["a".into(), "b".into()]).is_err());
        assert!(ScoreVector::new(vec![f64::INFINITY], vec!["a".into()]).is_err());
        assert_eq!(ScoreVector::new(vec![1.0], vec!["a".into()]).unwrap().len(), 1);
    }

    #[test]
    fn embedding_difference_checks_dims() {
        let a = EmbeddingVector::new(vec![1.0, 2.0]).unwrap();
        let b = EmbeddingVector::new(vec![1.0]).unwrap();
        assert!(a.sub(&b).is_err());
        assert!(a.sub(&a).unwrap().is_zero());
    }
}
