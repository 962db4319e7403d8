use crate::backends::{BackendDescriptor, BackendKind, Perturber};
use crate::error::{Error, Result};
use crate::perturbation::VariationFactor;

type Table = &'static [(&'static str, &'static [&'static str])];

const SUBJECT: Table = &[
    ("football player", &["basketball player"]),
    ("man", &["woman", "boy"]),
    ("woman", &["man", "girl"]),
    ("boy", &["girl"]),
    ("girl", &["boy"]),
    ("dog", &["cat", "wolf"]),
    ("person", &["child"]),
];

const OBJECT: Table = &[
    ("apple", &["orange", "pear"]),
    ("carrot", &["turnip"]),
    ("truck", &["car", "bus"]),
    ("car", &["truck", "van"]),
    ("ball", &["frisbee"]),
    ("cup", &["bowl"]),
];

const BACKGROUND: Table = &[
    ("snow", &["beach", "forest", "city"]),
    ("forest", &["snow", "beach", "city"]),
    ("city", &["snow", "beach", "forest"]),
    ("beach", &["snow", "forest", "city"]),
    ("mountain", &["beach", "ice sheet"]),
    ("ice sheet", &["desert", "grass"]),
    ("road", &["river", "beach"]),
    ("street", &["river", "beach"]),
    ("table", &["grass"]),
];

const ADJECTIVE: Table = &[
    ("old", &["new", "young"]),
    ("new", &["old"]),
    ("young", &["old"]),
    ("red", &["blue", "green"]),
    ("blue", &["red"]),
    ("small", &["large"]),
    ("large", &["small"]),
    ("bright", &["dark"]),
    ("dark", &["bright"]),
    ("sunny", &["rainy"]),
];

/// Nouns that may receive an inserted weather adjective.
const ADJECTIVE_INSERT_TARGETS: &[&str] = &["street", "road", "mountain", "field", "beach"];
const INSERTED_ADJECTIVES: &[&str] = &["snowy", "rainy"];

const DATA_DOMAIN: Table = &[
    ("photo", &["sketch", "painting"]),
    ("photograph", &["sketch", "painting"]),
    ("picture", &["sketch", "painting"]),
];

/// Rule-based perturber: swaps words found in a per-factor substitution
/// table, and for the adjective factor also inserts weather adjectives.
///
/// The seed rotates the order in which alternatives are offered.
#[derive(Clone, Debug, Default)]
pub struct LexiconPerturber {
    seed: u64,
}

impl LexiconPerturber {
    pub fn new(seed: u64) -> Self {
        LexiconPerturber { seed }
    }

    fn table(factor: VariationFactor) -> Table {
        match factor {
            VariationFactor::Subject => SUBJECT,
            VariationFactor::Object => OBJECT,
            VariationFactor::Background => BACKGROUND,
            VariationFactor::Adjective => ADJECTIVE,
            VariationFactor::DataDomain => DATA_DOMAIN,
        }
    }

    fn rotated<'a>(&self, alts: &'a [&'a str]) -> impl Iterator<Item = &'a str> + 'a {
        let offset = (self.seed % alts.len() as u64) as usize;
        alts.iter().cycle().skip(offset).take(alts.len()).copied()
    }
}

fn normalize(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Rebuilds the caption with `words[start..end]` replaced, keeping the
/// punctuation that surrounded the replaced run.
fn splice(words: &[&str], start: usize, end: usize, replacement: &str) -> String {
    let mut out: Vec<String> = words[..start].iter().map(|w| w.to_string()).collect();
    if start < end {
        let first = words[start];
        let last = words[end - 1];
        let lead: String = first.chars().take_while(|c| !c.is_alphanumeric()).collect();
        let trail: String = {
            let rev: String = last.chars().rev().take_while(|c| !c.is_alphanumeric()).collect();
            rev.chars().rev().collect()
        };
        out.push(format!("{lead}{replacement}{trail}"));
    } else {
        out.push(replacement.to_string());
    }
    out.extend(words[end..].iter().map(|w| w.to_string()));
    out.join(" ")
}

impl Perturber for LexiconPerturber {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Perturber,
            name: "lexicon-perturber".into(),
            deterministic: true,
            seed: self.seed,
            output_dim: None,
        }
    }

    fn perturb(
        &self,
        caption: &str,
        factor: VariationFactor,
        max_edits: usize,
    ) -> Result<Vec<String>> {
        if caption.trim().is_empty() {
            return Err(Error::invalid("caption", "must be nonempty"));
        }
        let words: Vec<&str> = caption.split_whitespace().collect();
        let norm: Vec<String> = words.iter().map(|w| normalize(w)).collect();
        let mut out = Vec::new();
        let push = |text: String, out: &mut Vec<String>| {
            if out.len() < max_edits && !out.contains(&text) {
                out.push(text);
            }
        };

        let mut i = 0;
        while i < words.len() {
            // Longest key starting at word i.
            let hit = Self::table(factor)
                .iter()
                .filter(|(key, _)| {
                    let key_words: Vec<&str> = key.split(' ').collect();
                    i + key_words.len() <= words.len()
                        && key_words.iter().zip(&norm[i..]).all(|(k, w)| *k == w)
                })
                .max_by_key(|(key, _)| key.split(' ').count());
            match hit {
                Some((key, alts)) => {
                    let len = key.split(' ').count();
                    for alt in self.rotated(alts) {
                        push(splice(&words, i, i + len, alt), &mut out);
                    }
                    i += len;
                }
                None => i += 1,
            }
        }

        if factor == VariationFactor::Adjective {
            for (i, w) in norm.iter().enumerate() {
                let preceded_by_adjective = i > 0
                    && (INSERTED_ADJECTIVES.contains(&norm[i - 1].as_str())
                        || ADJECTIVE.iter().any(|(k, _)| *k == norm[i - 1]));
                if ADJECTIVE_INSERT_TARGETS.contains(&w.as_str()) && !preceded_by_adjective {
                    for adj in self.rotated(INSERTED_ADJECTIVES) {
                        push(splice(&words, i, i, adj), &mut out);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjective_swap_old_to_new() {
        let p = LexiconPerturber::new(0);
        let edits = p
            .perturb("an old truck on a road", VariationFactor::Adjective, 10)
            .unwrap();
        assert!(edits.contains(&"an new truck on a road".to_string()), "{edits:?}");
        assert!(edits.contains(&"an young truck on a road".to_string()));
        assert!(edits.contains(&"an old truck on a snowy road".to_string()));
    }

    #[test]
    fn background_swap_mountain_to_beach() {
        let p = LexiconPerturber::new(0);
        let edits = p
            .perturb("a man skiing on a mountain.", VariationFactor::Background, 5)
            .unwrap();
        assert_eq!(
            edits,
            vec!["a man skiing on a beach.", "a man skiing on a ice sheet."]
        );
    }

    #[test]
    fn multiword_keys_and_limits() {
        let p = LexiconPerturber::new(0);
        let edits = p
            .perturb("a football player near a man", VariationFactor::Subject, 2)
            .unwrap();
        assert_eq!(
            edits,
            vec!["a basketball player near a man", "a football player near a woman"]
        );
    }

    #[test]
    fn seed_rotates_alternatives() {
        let a = LexiconPerturber::new(0)
            .perturb("a sled on snow", VariationFactor::Background, 1)
            .unwrap();
        let b = LexiconPerturber::new(1)
            .perturb("a sled on snow", VariationFactor::Background, 1)
            .unwrap();
        assert_eq!(a, ["a sled on beach"]);
        assert_eq!(b, ["a sled on forest"]);
    }

    #[test]
    fn no_match_yields_nothing() {
        let p = LexiconPerturber::new(0);
        assert!(p
            .perturb("quiet words only", VariationFactor::Object, 3)
            .unwrap()
            .is_empty());
    }
}
