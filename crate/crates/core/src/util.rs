//! Small shared helpers: tokenization, stable hashing, vector arithmetic and
//! JSON-lines IO.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{io_at, Error, Result};

/// Function words ignored by the bag-of-words embedders.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "on", "in", "at", "to", "with", "is", "are", "was",
    "be", "by", "for", "from", "it", "its", "this", "that", "there", "as", "into", "onto",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Lowercased whitespace tokens with surrounding punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn stable_hash_parts(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.iter().chain(std::iter::once(&0xffu8)) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Deterministic pseudo-random vector with entries uniform in `[-amplitude, amplitude]`.
pub fn hashed_vector(key: &str, salt: u64, dim: usize, amplitude: f64) -> Vec<f64> {
    let seed = stable_hash_parts(&[key.as_bytes(), &salt.to_le_bytes()]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim)
        .map(|_| rng.random_range(-amplitude..=amplitude))
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `a * x + b * y`, element-wise.
pub fn axpby(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(u, v)| a * u + b * v).collect()
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = io_at(path, File::open(path))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = io_at(path, line)?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            Error::from(e).context(format!("{}:{}", path.display(), lineno + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = io_at(path, File::create(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        io_at(path, w.write_all(b"\n"))?;
    }
    io_at(path, w.flush())
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    io_at(path, std::fs::write(path, text))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = io_at(path, std::fs::read_to_string(path))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_strips_punctuation_and_case() {
        assert_eq!(
            tokenize("A Man, skiing on a mountain."),
            vec!["a", "man", "skiing", "on", "a", "mountain"]
        );
        assert!(tokenize("  ... ").is_empty());
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        assert_eq!(stable_hash(b""), 0xcbf29ce484222325);
        assert_eq!(stable_hash(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(stable_hash(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn hashed_vectors_are_reproducible() {
        let a = hashed_vector("snow", 3, 16, 1.0);
        assert_eq!(a, hashed_vector("snow", 3, 16, 1.0));
        assert_ne!(a, hashed_vector("snow", 4, 16, 1.0));
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn round2_behaves_like_table_formatting() {
        assert_eq!(round2(80.77 - 95.43), -14.66);
        assert_eq!(round2(25.0), 25.0);
    }
}
