//! Caption perturbation: low-rank adapter algebra, edit generation over the
//! five variation factors, and similarity / class-protection filtering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::backends::{EmbeddingVector, Perturber, SentenceEmbedder};
use crate::error::{Error, Result};
use crate::util;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationFactor {
    Subject,
    Object,
    Background,
    Adjective,
    DataDomain,
}

impl VariationFactor {
    pub const ALL: [VariationFactor; 5] = [
        VariationFactor::Subject,
        VariationFactor::Object,
        VariationFactor::Background,
        VariationFactor::Adjective,
        VariationFactor::DataDomain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariationFactor::Subject => "subject",
            VariationFactor::Object => "object",
            VariationFactor::Background => "background",
            VariationFactor::Adjective => "adjective",
            VariationFactor::DataDomain => "data_domain",
        }
    }
}

impl fmt::Display for VariationFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariationFactor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariationFactor::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid("variation factor", format!("unknown `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    RejectedClassChange,
    RejectedTooSimilar,
    RejectedDegenerate,
}

/// Half-open range `[start, end)` of whitespace-token indices in the original
/// caption, and the tokens that replaced it. An insertion has `start == end`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangedSpan {
    pub start: usize,
    pub end: usize,
    pub replacement: Vec<String>,
}

impl ChangedSpan {
    /// Minimal differing span between two token sequences (common prefix and
    /// suffix stripped). `None` when the sequences are equal.
    pub fn between(original: &[String], perturbed: &[String]) -> Option<Self> {
        if original == perturbed {
            return None;
        }
        let prefix = original
            .iter()
            .zip(perturbed)
            .take_while(|(a, b)| a == b)
            .count();
        let max_suffix = original.len().min(perturbed.len()) - prefix;
        let suffix = original
            .iter()
            .rev()
            .zip(perturbed.iter().rev())
            .take(max_suffix)
            .take_while(|(a, b)| a == b)
            .count();
        Some(ChangedSpan {
            start: prefix,
            end: original.len() - suffix,
            replacement: perturbed[prefix..perturbed.len() - suffix].to_vec(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end && self.replacement.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionEdit {
    pub original: String,
    pub perturbed: String,
    pub factor: VariationFactor,
    pub changed_span: Option<ChangedSpan>,
    pub similarity_to_original: Option<f64>,
    pub verdict: Option<Verdict>,
}

impl CaptionEdit {
    pub fn new(original: &str, perturbed: &str, factor: VariationFactor) -> Self {
        CaptionEdit {
            original: original.to_string(),
            perturbed: perturbed.to_string(),
            factor,
            changed_span: ChangedSpan::between(&word_tokens(original), &word_tokens(perturbed)),
            similarity_to_original: None,
            verdict: None,
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.verdict == Some(Verdict::Accepted)
    }
}

/// Normalised word tokens, one per whitespace-separated word. Words made only
/// of punctuation become empty strings so indices stay aligned with the text.
fn word_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .collect()
}

/// Low-rank update `W_ft = W_pt + A B` with `A: d x r`, `B: r x k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterWeights {
    base: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl AdapterWeights {
    pub fn new(base: DMatrix<f64>, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let (d, k) = base.shape();
        let r = a.ncols();
        if a.nrows() != d || b.nrows() != r || b.ncols() != k {
            return Err(Error::ShapeMismatch(format!(
                "base {d}x{k}, A {}x{}, B {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if r == 0 || r > d.min(k) {
            return Err(Error::invalid("rank", format!("r = {r} outside 1..={}", d.min(k))));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !(finite(&base) && finite(&a) && finite(&b)) {
            return Err(Error::invalid("adapter", "non-finite entry"));
        }
        Ok(AdapterWeights { base, a, b })
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn delta(&self) -> DMatrix<f64> {
        &self.a * &self.b
    }
}

/// Merged fine-tuned weight `W_pt + A B`.
pub fn merge_adapter(adapter: &AdapterWeights) -> DMatrix<f64> {
    &adapter.base + adapter.delta()
}

/// Cosine of the angle between two embeddings.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 {
        return Err(Error::ZeroVector("first cosine argument"));
    }
    if nv == 0.0 {
        return Err(Error::ZeroVector("second cosine argument"));
    }
    Ok((util::dot(&u.data, &v.data) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Asks the perturber for up to `n_per_factor` rewrites per factor. Edits
/// keep generation order; identical perturbed texts are kept once.
pub fn generate_edits(
    caption: &str,
    factors: &[VariationFactor],
    n_per_factor: usize,
    perturber: &dyn Perturber,
) -> Result<Vec<CaptionEdit>> {
    if caption.trim().is_empty() {
        return Err(Error::invalid("caption", "must be nonempty"));
    }
    if n_per_factor == 0 {
        return Err(Error::invalid("n_per_factor", "must be at least 1"));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &factor in factors {
        let texts = perturber
            .perturb(caption, factor, n_per_factor)
            .map_err(|e| e.context(format!("perturbing `{caption}` ({factor})")))?;
        for text in texts.into_iter().take(n_per_factor) {
            if seen.insert(text.clone()) {
                out.push(CaptionEdit::new(caption, &text, factor));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub max_similarity: f64,
    pub class_synonyms: BTreeMap<String, Vec<String>>,
    pub min_caption_tokens: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            max_similarity: 0.95,
            class_synonyms: BTreeMap::new(),
            min_caption_tokens: 3,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_similarity > 0.0 && self.max_similarity <= 1.0) {
            return Err(Error::invalid(
                "max_similarity",
                format!("{} outside (0, 1]", self.max_similarity),
            ));
        }
        Ok(())
    }

    /// Token phrases protecting `gt_class`: the class name itself plus synonyms.
    pub fn protected_phrases(&self, gt_class: &str) -> Vec<Vec<String>> {
        let mut out = vec![util::tokenize(gt_class)];
        if let Some(syn) = self.class_synonyms.get(gt_class) {
            out.extend(syn.iter().map(|s| util::tokenize(s)));
        }
        out.retain(|p| !p.is_empty());
        out
    }
}

fn count_phrase(tokens: &[String], phrase: &[String]) -> usize {
    if phrase.is_empty() || tokens.len() < phrase.len() {
        return 0;
    }
    tokens.windows(phrase.len()).filter(|w| *w == phrase).count()
}

/// True when the edit removes or replaces an occurrence of a protected phrase.
fn touches_class(edit: &CaptionEdit, protected: &[Vec<String>]) -> bool {
    let before = util::tokenize(&edit.original);
    let after = util::tokenize(&edit.perturbed);
    protected
        .iter()
        .any(|p| count_phrase(&after, p) < count_phrase(&before, p))
}

/// Assigns a verdict to every edit, preserving order.
///
/// Checks run in a fixed order: class protection, then similarity, then
/// degeneracy (too few tokens, no change, or an embedding with no content).
pub fn filter_edits(
    edits: &[CaptionEdit],
    gt_class: &str,
    policy: &FilterPolicy,
    embedder: &dyn SentenceEmbedder,
) -> Result<Vec<CaptionEdit>> {
    if gt_class.trim().is_empty() {
        return Err(Error::invalid("gt_class", "must be nonempty"));
    }
    policy.validate()?;
    let protected = policy.protected_phrases(gt_class);
    let mut out = Vec::with_capacity(edits.len());
    for edit in edits {
        let mut e = edit.clone();
        e.changed_span = ChangedSpan::between(&word_tokens(&e.original), &word_tokens(&e.perturbed));
        let similarity = embedder
            .embed(&e.original)
            .and_then(|a| Ok((a, embedder.embed(&e.perturbed)?)))
            .ok()
            .and_then(|(a, b)| cosine_similarity(&a, &b).ok());
        e.similarity_to_original = similarity;
        let verdict = if touches_class(&e, &protected) {
            Verdict::RejectedClassChange
        } else if similarity.is_some_and(|s| s > policy.max_similarity) {
            Verdict::RejectedTooSimilar
        } else if e.original == e.perturbed {
            // Identical text with a zero embedding never gets a similarity.
            Verdict::RejectedTooSimilar
        } else if util::tokenize(&e.perturbed).len() < policy.min_caption_tokens
            || e.changed_span.as_ref().is_none_or(ChangedSpan::is_empty)
            || similarity.is_none()
        {
            Verdict::RejectedDegenerate
        } else {
            Verdict::Accepted
        };
        e.verdict = Some(verdict);
        out.push(e);
    }
    Ok(out)
}

pub fn write_edits(path: &Path, edits: &[CaptionEdit]) -> Result<()> {
    util::write_jsonl(path, edits)
}

pub fn read_edits(path: &Path) -> Result<Vec<CaptionEdit>> {
    util::read_jsonl(path)
}

/// Reads a `{class: [synonym, ...]}` JSON map.
pub fn load_synonyms(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    util::read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::toy::{BagOfWordsEmbedder, LexiconPerturber};

    fn toks(s: &str) -> Vec<String> {
        word_tokens(s)
    }

    #[test]
    fn merge_small_example() {
        let base = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let b = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        let ad = AdapterWeights::new(base.clone(), a, b).unwrap();
        assert_eq!(merge_adapter(&ad), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]));
        assert_eq!(ad.base(), &base);
    }

    #[test]
    fn merge_with_zero_a_is_base() {
        let base = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        let ad = AdapterWeights::new(base.clone(), DMatrix::zeros(3, 2), DMatrix::from_element(2, 4, 7.0))
            .unwrap();
        assert_eq!(merge_adapter(&ad), base);
    }

    #[test]
    fn adapter_shape_and_rank_checks() {
        let base = DMatrix::<f64>::zeros(3, 2);
        assert!(AdapterWeights::new(base.clone(), DMatrix::zeros(3, 1), DMatrix::zeros(2, 2)).is_err());
        assert!(AdapterWeights::new(base.clone(), DMatrix::zeros(3, 3), DMatrix::zeros(3, 2)).is_err());
        assert!(AdapterWeights::new(base, DMatrix::zeros(3, 0), DMatrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn span_of_substitution_and_insertion() {
        let s = ChangedSpan::between(&toks("an old truck"), &toks("an new truck")).unwrap();
        assert_eq!((s.start, s.end, s.replacement.as_slice()), (1, 2, &["new".to_string()][..]));
        let s = ChangedSpan::between(&toks("on a road"), &toks("on a snowy road")).unwrap();
        assert_eq!((s.start, s.end), (2, 2));
        assert_eq!(s.replacement, vec!["snowy"]);
        assert!(ChangedSpan::between(&toks("same"), &toks("same")).is_none());
    }

    #[test]
    fn cosine_examples() {
        let u = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let v = EmbeddingVector::new(vec![1.0, 1.0]).unwrap();
        assert!((cosine_similarity(&u, &v).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(cosine_similarity(&u, &u).unwrap(), 1.0);
        let w = EmbeddingVector::new(vec![0.0, 3.0]).unwrap();
        assert_eq!(cosine_similarity(&u, &w).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&u, &EmbeddingVector::zeros(2)),
            Err(Error::ZeroVector(_))
        ));
    }

    #[test]
    fn generate_tags_factors_and_dedupes() {
        let p = LexiconPerturber::new(0);
        let edits = generate_edits(
            "an old truck on a road",
            &[VariationFactor::Adjective, VariationFactor::Object],
            3,
            &p,
        )
        .unwrap();
        assert!(edits.len() <= 6);
        assert!(edits
            .iter()
            .any(|e| e.factor == VariationFactor::Adjective && e.perturbed == "an new truck on a road"));
        assert!(edits.iter().all(|e| e.verdict.is_none()));
        assert!(generate_edits("x", &[VariationFactor::Object], 0, &p).is_err());
    }

    #[test]
    fn class_change_is_rejected() {
        let e = CaptionEdit::new("a carrot on a table", "a turnip on a table", VariationFactor::Object);
        let out = filter_edits(&[e], "carrot", &FilterPolicy::default(), &BagOfWordsEmbedder::default())
            .unwrap();
        assert_eq!(out[0].verdict, Some(Verdict::RejectedClassChange));
    }

    #[test]
    fn synonyms_are_protected() {
        let mut policy = FilterPolicy::default();
        policy
            .class_synonyms
            .insert("dog sled".into(), vec!["sledge".into()]);
        let e = CaptionEdit::new("a sledge on snow", "a boat on snow", VariationFactor::Object);
        let out = filter_edits(&[e], "dog sled", &policy, &BagOfWordsEmbedder::default()).unwrap();
        assert_eq!(out[0].verdict, Some(Verdict::RejectedClassChange));
    }

    #[test]
    fn identity_and_snowy_street() {
        let emb = BagOfWordsEmbedder::default();
        let same = CaptionEdit::new("red car on street", "red car on street", VariationFactor::Adjective);
        let snowy = CaptionEdit::new("red car on street", "red car on snowy street", VariationFactor::Adjective);
        let out = filter_edits(&[same, snowy], "car", &FilterPolicy::default(), &emb).unwrap();
        assert_eq!(out[0].verdict, Some(Verdict::RejectedTooSimilar));
        assert_eq!(out[1].verdict, Some(Verdict::Accepted));
        assert!(out[1].similarity_to_original.unwrap() < 0.95);
    }

    #[test]
    fn short_captions_are_degenerate() {
        let e = CaptionEdit::new("red car", "blue car", VariationFactor::Adjective);
        let out = filter_edits(&[e], "car", &FilterPolicy::default(), &BagOfWordsEmbedder::default())
            .unwrap();
        assert_eq!(out[0].verdict, Some(Verdict::RejectedDegenerate));
    }

    #[test]
    fn factor_names_round_trip() {
        for f in VariationFactor::ALL {
            assert_eq!(f.as_str().parse::<VariationFactor>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{f}\""));
        }
    }

    #[test]
    fn edits_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edits.jsonl");
        let edits = vec![CaptionEdit::new("a b c", "a d c", VariationFactor::Object)];
        write_edits(&path, &edits).unwrap();
        assert_eq!(read_edits(&path).unwrap(), edits);
    }
}
