//! Visual vocabulary shared by the toy backends.
//!
//! Every concept is a phrase tied to an image region and a colour. The toy
//! captioner names the nearest concepts, the toy generator paints them, and
//! the toy joint encoder recognises them, so all three agree on what a word
//! looks like.

use serde::{Deserialize, Serialize};

use super::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Foreground,
    Background,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Concept {
    pub phrase: String,
    pub region: Region,
    pub color: [f64; 3],
}

/// Scene groups of the standard lexicon, each with the six subjects that
/// habitually appear in it.
pub const SCENE_GROUPS: [(&str, [&str; 6]); 4] = [
    ("snow", ["dog sled", "ski", "polar bear", "snowmobile", "igloo", "penguin"]),
    ("forest", ["howler monkey", "red fox", "owl", "woodpecker", "squirrel", "moose"]),
    ("city", ["seat belt", "taxi", "bus", "traffic light", "bicycle", "mailbox"]),
    ("beach", ["sea turtle", "crab", "surfboard", "seagull", "sandcastle", "pelican"]),
];

const SCENE_COLORS: [[f64; 3]; 4] = [
    [0.94, 0.95, 0.98],
    [0.16, 0.46, 0.18],
    [0.42, 0.42, 0.48],
    [0.90, 0.78, 0.50],
];

/// Backgrounds the perturber may introduce that no subject is tied to.
const EXTRA_SCENES: [(&str, [f64; 3]); 8] = [
    ("mountain", [0.50, 0.40, 0.35]),
    ("ice sheet", [0.70, 0.85, 0.95]),
    ("desert", [0.80, 0.60, 0.30]),
    ("grass", [0.35, 0.75, 0.25]),
    ("road", [0.22, 0.22, 0.22]),
    ("river", [0.20, 0.35, 0.70]),
    ("table", [0.55, 0.35, 0.20]),
    ("street", [0.30, 0.28, 0.36]),
];

/// Colour of the `i`-th subject: a low-discrepancy walk over the RGB cube.
pub fn subject_color(i: usize) -> [f64; 3] {
    let f = i as f64;
    [
        (f * 0.618 + 0.1).fract(),
        (f * 0.382 + 0.35).fract(),
        (f * 0.213 + 0.6).fract(),
    ]
}

#[derive(Clone, Debug)]
pub struct Lexicon {
    concepts: Vec<Concept>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::standard()
    }
}

impl Lexicon {
    pub fn new(concepts: Vec<Concept>) -> Self {
        Lexicon { concepts }
    }

    pub fn standard() -> Self {
        let mut concepts = Vec::new();
        for (g, (scene, _)) in SCENE_GROUPS.iter().enumerate() {
            concepts.push(Concept {
                phrase: scene.to_string(),
                region: Region::Background,
                color: SCENE_COLORS[g],
            });
        }
        for (scene, color) in EXTRA_SCENES {
            concepts.push(Concept {
                phrase: scene.to_string(),
                region: Region::Background,
                color,
            });
        }
        for (i, subject) in Self::subjects().into_iter().enumerate() {
            concepts.push(Concept {
                phrase: subject.to_string(),
                region: Region::Foreground,
                color: subject_color(i),
            });
        }
        Lexicon { concepts }
    }

    /// All subjects of the standard scene groups, in group order.
    pub fn subjects() -> Vec<&'static str> {
        SCENE_GROUPS
            .iter()
            .flat_map(|(_, subjects)| subjects.iter().copied())
            .collect()
    }

    pub fn scene_color(scene: &str) -> Option<[f64; 3]> {
        SCENE_GROUPS
            .iter()
            .position(|(s, _)| *s == scene)
            .map(|g| SCENE_COLORS[g])
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn index_of(&self, phrase: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c.phrase == phrase)
    }

    /// Splits a token sequence into concept phrases (longest match first)
    /// and leftover single tokens.
    pub fn segment<'a>(&self, tokens: &'a [String]) -> Vec<(Option<usize>, &'a [String])> {
        let longest = self
            .concepts
            .iter()
            .map(|c| c.phrase.split(' ').count())
            .max()
            .unwrap_or(1);
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut matched = None;
            for len in (1..=longest.min(tokens.len() - i)).rev() {
                let phrase = tokens[i..i + len].join(" ");
                if let Some(idx) = self.index_of(&phrase) {
                    matched = Some((idx, len));
                    break;
                }
            }
            match matched {
                Some((idx, len)) => {
                    out.push((Some(idx), &tokens[i..i + len]));
                    i += len;
                }
                None => {
                    out.push((None, &tokens[i..i + 1]));
                    i += 1;
                }
            }
        }
        out
    }

    /// Nearest concept of `region` to `color`, with its Euclidean distance.
    pub fn nearest(&self, region: Region, color: [f64; 3]) -> Option<(usize, f64)> {
        self.concepts
            .iter()
            .enumerate()
            .filter(|(_, c)| c.region == region)
            .map(|(i, c)| (i, color_distance(c.color, color)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

pub fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Spatial convention of the toy world: the subject occupies the central box
/// spanning the middle half of each axis, everything else is background.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SceneLayout;

impl SceneLayout {
    pub fn region_at(height: usize, width: usize, y: usize, x: usize) -> Region {
        let (y0, y1) = (height / 4, height - height / 4);
        let (x0, x1) = (width / 4, width - width / 4);
        if (y0..y1).contains(&y) && (x0..x1).contains(&x) {
            Region::Foreground
        } else {
            Region::Background
        }
    }

    /// Mean RGB colour over one region. Single-channel images are read as grey;
    /// channels beyond the third are ignored.
    pub fn region_mean(image: &ImageTensor, region: Region) -> [f64; 3] {
        let (c, h, w) = image.shape();
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for y in 0..h {
            for x in 0..w {
                if Self::region_at(h, w, y, x) != region {
                    continue;
                }
                n += 1;
                for (ch, s) in sum.iter_mut().enumerate() {
                    *s += image.get(ch.min(c - 1), y, x);
                }
            }
        }
        if n == 0 {
            // Degenerate 1-pixel images have no foreground box.
            return [image.get(0, 0, 0); 3];
        }
        sum.map(|s| s / n as f64)
    }

    /// A latent-shaped pattern painting `color` over `region` and zero elsewhere.
    pub fn region_pattern(
        channels: usize,
        height: usize,
        width: usize,
        region: Region,
        color: [f64; 3],
    ) -> Vec<f64> {
        let mut out = vec![0.0; channels * height * width];
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    if Self::region_at(height, width, y, x) == region {
                        out[(c * height + y) * width + x] = color[c.min(2)];
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::tokenize;

    #[test]
    fn segment_prefers_longest_phrase() {
        let lex = Lexicon::standard();
        let tokens = tokenize("a dog sled on the ice sheet");
        let seg = lex.segment(&tokens);
        let phrases: Vec<String> = seg.iter().map(|(_, t)| t.join(" ")).collect();
        assert_eq!(phrases, ["a", "dog sled", "on", "the", "ice sheet"]);
        assert!(seg[1].0.is_some() && seg[4].0.is_some() && seg[0].0.is_none());
    }

    #[test]
    fn layout_splits_center_box() {
        assert_eq!(SceneLayout::region_at(16, 16, 0, 0), Region::Background);
        assert_eq!(SceneLayout::region_at(16, 16, 4, 4), Region::Foreground);
        assert_eq!(SceneLayout::region_at(16, 16, 11, 11), Region::Foreground);
        assert_eq!(SceneLayout::region_at(16, 16, 12, 11), Region::Background);
    }

    #[test]
    fn scene_colors_are_well_separated() {
        let lex = Lexicon::standard();
        let bg: Vec<_> = lex
            .concepts()
            .iter()
            .filter(|c| c.region == Region::Background)
            .collect();
        for (i, a) in bg.iter().enumerate() {
            for b in &bg[i + 1..] {
                assert!(color_distance(a.color, b.color) > 0.15, "{} vs {}", a.phrase, b.phrase);
            }
        }
    }
}
