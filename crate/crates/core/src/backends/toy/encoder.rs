use crate::backends::lexicon::{color_distance, Lexicon, Region, SceneLayout};
use crate::backends::{BackendDescriptor, BackendKind, EmbeddingVector, ImageTensor, JointEncoder};
use crate::error::Result;
use crate::util::{self, is_stopword};

const HASH_DIM: usize = 64;
const UNKNOWN_WEIGHT: f64 = 0.5;

/// Joint image-text encoder over the lexicon's concept space.
///
/// Layout: one axis per concept, then two off-manifold axes (foreground,
/// background), then a small hashed block for words outside the lexicon.
///
/// Text maps to concept counts plus hashed unknown words. An image region
/// maps to a sharp softmax over that region's concepts by colour distance,
/// and its off-manifold axis records `kappa` times the distance to the
/// nearest concept, so an image whose region sits between two concepts is
/// penalised.
#[derive(Clone, Debug)]
pub struct ToyJointEncoder {
    lexicon: Lexicon,
    temperature: f64,
    kappa: f64,
    seed: u64,
}

impl Default for ToyJointEncoder {
    fn default() -> Self {
        Self::new(0)
    }
}

impl ToyJointEncoder {
    pub fn new(seed: u64) -> Self {
        ToyJointEncoder {
            lexicon: Lexicon::standard(),
            temperature: 0.01,
            kappa: 5.0,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.lexicon.len() + 2 + HASH_DIM
    }

    fn off_axis(&self, region: Region) -> usize {
        self.lexicon.len()
            + match region {
                Region::Foreground => 0,
                Region::Background => 1,
            }
    }
}

impl JointEncoder for ToyJointEncoder {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::JointEncoder,
            name: "toy-joint-encoder".into(),
            deterministic: true,
            seed: self.seed,
            output_dim: Some(self.dim()),
        }
    }

    fn encode_image(&self, image: &ImageTensor) -> Result<EmbeddingVector> {
        let mut v = vec![0.0; self.dim()];
        for region in [Region::Foreground, Region::Background] {
            let mean = SceneLayout::region_mean(image, region);
            let members: Vec<(usize, f64)> = self
                .lexicon
                .concepts()
                .iter()
                .enumerate()
                .filter(|(_, c)| c.region == region)
                .map(|(i, c)| (i, color_distance(c.color, mean)))
                .collect();
            let dmin = members.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
            let logits: Vec<f64> = members
                .iter()
                .map(|(_, d)| -(d * d - dmin * dmin) / self.temperature)
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for ((i, _), l) in members.iter().zip(&logits) {
                v[*i] = l.exp() / z;
            }
            v[self.off_axis(region)] = self.kappa * dmin;
        }
        EmbeddingVector::new(v)
    }

    fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = vec![0.0; self.dim()];
        let tokens = util::tokenize(text);
        let base = self.lexicon.len() + 2;
        for (concept, words) in self.lexicon.segment(&tokens) {
            match concept {
                Some(i) => v[i] += 1.0,
                None if !is_stopword(&words[0]) => {
                    let h = util::hashed_vector(&words[0], self.seed, HASH_DIM, UNKNOWN_WEIGHT);
                    for (slot, x) in v[base..].iter_mut().zip(h) {
                        *slot += x;
                    }
                }
                None => {}
            }
        }
        EmbeddingVector::new(v)
    }
}
