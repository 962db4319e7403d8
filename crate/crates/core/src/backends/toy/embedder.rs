use crate::backends::{BackendDescriptor, BackendKind, EmbeddingVector, SentenceEmbedder};
use crate::error::{Error, Result};
use crate::util::{self, is_stopword, stable_hash_parts};

pub const DEFAULT_DIM: usize = 512;

/// Hashed bag-of-words sentence embedder.
///
/// Each content token lands in one signed bucket; the count vector is then
/// L2-normalised. Stopwords are dropped, so "red car on street" and
/// "red car on snowy street" share three of four tokens.
#[derive(Clone, Debug)]
pub struct BagOfWordsEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for BagOfWordsEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM, 0)
    }
}

impl BagOfWordsEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        BagOfWordsEmbedder {
            dim: dim.max(1),
            seed,
        }
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        let h = stable_hash_parts(&[token.as_bytes(), &self.seed.to_le_bytes()]);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }
}

impl SentenceEmbedder for BagOfWordsEmbedder {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::SentenceEmbedder,
            name: "bow-embedder".into(),
            deterministic: true,
            seed: self.seed,
            output_dim: Some(self.dim),
        }
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = vec![0.0; self.dim];
        for token in util::tokenize(text) {
            if is_stopword(&token) {
                continue;
            }
            let (i, sign) = self.bucket(&token);
            v[i] += sign;
        }
        let n = util::norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        EmbeddingVector::new(v).map_err(|e| Error::backend("bow-embedder", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_tokens_give_expected_cosine() {
        let e = BagOfWordsEmbedder::default();
        let a = e.embed("red car on street").unwrap();
        let b = e.embed("red car on snowy street").unwrap();
        // Four distinct buckets in this vocabulary: cos = 3 / (sqrt 3 * sqrt 4).
        let expected = 3.0 / 12f64.sqrt();
        assert!((util::dot(&a.data, &b.data) - expected).abs() < 1e-12);
    }

    #[test]
    fn stopword_only_text_is_zero() {
        let e = BagOfWordsEmbedder::default();
        assert!(e.embed("a the of").unwrap().is_zero());
        assert!((e.embed("Snow!").unwrap().norm() - 1.0).abs() < 1e-12);
    }
}
