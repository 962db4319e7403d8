use std::collections::BTreeMap;
use std::path::Path;

use crate::backends::lexicon::{Lexicon, Region, SceneLayout, SCENE_GROUPS};
use crate::backends::{
    BackendDescriptor, BackendKind, Classifier, ImageTensor, ScoreVector, TrainableClassifier,
};
use crate::error::{Error, Result};
use crate::reinforcement::ParameterSet;
use crate::util;

pub const FG_PROTOTYPES: &str = "body.fg_prototypes";
pub const BG_PROTOTYPES: &str = "body.bg_prototypes";
pub const BANDWIDTH: &str = "body.bandwidth";
pub const SCALE: &str = "body.scale";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

const CLASSES_FILE: &str = "classes.json";

/// Linear-softmax head over fixed radial-basis colour features.
///
/// The body compares the mean colour of each image region with a bank of
/// prototypes (`S * exp(-|m - p|^2 / 2h^2)`); the head is `W f + b`. Only the
/// head is trainable. Because the body also sees the background, a head fitted
/// on scene-correlated data leans on background evidence.
#[derive(Clone, Debug)]
pub struct ToyClassifier {
    class_names: Vec<String>,
    params: ParameterSet,
    seed: u64,
}

impl ToyClassifier {
    /// Untrained classifier over the standard lexicon subjects, with one
    /// foreground prototype per subject and one background prototype per scene.
    pub fn standard() -> Self {
        let lex = Lexicon::standard();
        let class_names: Vec<String> = Lexicon::subjects().iter().map(|s| s.to_string()).collect();
        let fg: Vec<f64> = class_names
            .iter()
            .flat_map(|c| lex.concepts()[lex.index_of(c).expect("subject in lexicon")].color)
            .collect();
        let bg: Vec<f64> = SCENE_GROUPS
            .iter()
            .flat_map(|(s, _)| Lexicon::scene_color(s).expect("scene colour"))
            .collect();
        let n_feat = fg.len() / 3 + bg.len() / 3;
        let c = class_names.len();
        let mut params = ParameterSet::new();
        params
            .insert(FG_PROTOTYPES, vec![fg.len() / 3, 3], fg, false)
            .and_then(|p| p.insert(BG_PROTOTYPES, vec![bg.len() / 3, 3], bg, false))
            .and_then(|p| p.insert(BANDWIDTH, vec![1], vec![0.12], false))
            .and_then(|p| p.insert(SCALE, vec![1], vec![6.0], false))
            .and_then(|p| p.insert(HEAD_WEIGHT, vec![c, n_feat], vec![0.0; c * n_feat], true))
            .and_then(|p| p.insert(HEAD_BIAS, vec![c], vec![0.0; c], true))
            .expect("consistent standard parameters");
        ToyClassifier {
            class_names,
            params,
            seed: 0,
        }
    }

    pub fn from_parts(class_names: Vec<String>, params: ParameterSet) -> Result<Self> {
        let out = ToyClassifier {
            class_names,
            params,
            seed: 0,
        };
        out.check()?;
        Ok(out)
    }

    fn check(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::ClassSetUndefined);
        }
        let c = self.class_names.len();
        let group = |name: &str| {
            self.params
                .get(name)
                .ok_or_else(|| Error::invalid("parameters", format!("missing group `{name}`")))
        };
        let fg = group(FG_PROTOTYPES)?;
        let bg = group(BG_PROTOTYPES)?;
        if fg.values.len() % 3 != 0 || bg.values.len() % 3 != 0 {
            return Err(Error::ShapeMismatch("prototype banks must be n x 3".into()));
        }
        if group(BANDWIDTH)?.values.len() != 1 || group(SCALE)?.values.len() != 1 {
            return Err(Error::ShapeMismatch("bandwidth and scale are scalars".into()));
        }
        let n_feat = (fg.values.len() + bg.values.len()) / 3;
        if group(HEAD_WEIGHT)?.values.len() != c * n_feat {
            return Err(Error::ShapeMismatch(format!(
                "head.weight must be {c} x {n_feat}"
            )));
        }
        if group(HEAD_BIAS)?.values.len() != c {
            return Err(Error::ShapeMismatch(format!("head.bias must have {c} entries")));
        }
        if !self.params.is_head(HEAD_WEIGHT) || !self.params.is_head(HEAD_BIAS) {
            return Err(Error::invalid("parameters", "head groups not marked as head"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn num_features(&self) -> usize {
        self.params.values(FG_PROTOTYPES).map(|v| v.len() / 3).unwrap_or(0)
            + self.params.values(BG_PROTOTYPES).map(|v| v.len() / 3).unwrap_or(0)
    }

    pub fn features(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let h = self.params.values(BANDWIDTH)?[0];
        let s = self.params.values(SCALE)?[0];
        let mut out = Vec::with_capacity(self.num_features());
        for (group, region) in [(FG_PROTOTYPES, Region::Foreground), (BG_PROTOTYPES, Region::Background)] {
            let m = SceneLayout::region_mean(image, region);
            for p in self.params.values(group)?.chunks_exact(3) {
                let d2 = (m[0] - p[0]).powi(2) + (m[1] - p[1]).powi(2) + (m[2] - p[2]).powi(2);
                out.push(s * (-d2 / (2.0 * h * h)).exp());
            }
        }
        Ok(out)
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        let w = self.params.values(HEAD_WEIGHT)?;
        let b = self.params.values(HEAD_BIAS)?;
        let f = features.len();
        if w.len() != b.len() * f {
            return Err(Error::DimensionMismatch {
                expected: w.len() / b.len().max(1),
                actual: f,
            });
        }
        Ok(w
            .chunks_exact(f)
            .zip(b)
            .map(|(row, bias)| util::dot(row, features) + bias)
            .collect())
    }

    /// Mean cross-entropy and head gradient over precomputed features.
    pub fn loss_and_gradient_from_features(
        &self,
        batch: &[(Vec<f64>, usize)],
    ) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "must be nonempty"));
        }
        let c = self.class_names.len();
        let f = self.num_features();
        let mut gw = vec![0.0; c * f];
        let mut gb = vec![0.0; c];
        let mut loss = 0.0;
        for (feat, y) in batch {
            if *y >= c {
                return Err(Error::invalid("label", format!("{y} >= {c} classes")));
            }
            let p = softmax(&self.logits(feat)?);
            loss -= p[*y].max(f64::MIN_POSITIVE).ln();
            for (j, pj) in p.iter().enumerate() {
                let g = pj - if j == *y { 1.0 } else { 0.0 };
                gb[j] += g;
                for (slot, x) in gw[j * f..(j + 1) * f].iter_mut().zip(feat) {
                    *slot += g * x;
                }
            }
        }
        let n = batch.len() as f64;
        gw.iter_mut().for_each(|g| *g /= n);
        gb.iter_mut().for_each(|g| *g /= n);
        let mut grads = BTreeMap::new();
        grads.insert(HEAD_WEIGHT.to_string(), gw);
        grads.insert(HEAD_BIAS.to_string(), gb);
        Ok((loss / n, grads))
    }

    /// Full-batch gradient descent on the head with L2 on the weights.
    /// Returns the final mean cross-entropy.
    pub fn fit_head(
        &mut self,
        data: &[(&ImageTensor, usize)],
        learning_rate: f64,
        l2: f64,
        iterations: usize,
    ) -> Result<f64> {
        let batch: Vec<(Vec<f64>, usize)> = data
            .iter()
            .map(|(img, y)| Ok((self.features(img)?, *y)))
            .collect::<Result<_>>()?;
        let mut loss = f64::NAN;
        for _ in 0..iterations {
            let (l, grads) = self.loss_and_gradient_from_features(&batch)?;
            loss = l;
            let w = self.params.values(HEAD_WEIGHT)?.to_vec();
            let gw = &grads[HEAD_WEIGHT];
            let new_w: Vec<f64> = w
                .iter()
                .zip(gw)
                .map(|(w, g)| w - learning_rate * (g + l2 * w))
                .collect();
            let new_b = util::axpby(1.0, self.params.values(HEAD_BIAS)?, -learning_rate, &grads[HEAD_BIAS]);
            self.params.set_values(HEAD_WEIGHT, new_w)?;
            self.params.set_values(HEAD_BIAS, new_b)?;
        }
        Ok(loss)
    }

    /// Writes the parameter directory plus the class list.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save(dir)?;
        util::write_json_pretty(&dir.join(CLASSES_FILE), &self.class_names)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let params = ParameterSet::load(dir)?;
        let class_names: Vec<String> = util::read_json(&dir.join(CLASSES_FILE))?;
        Self::from_parts(class_names, params)
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Classifier for ToyClassifier {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Classifier,
            name: "toy-classifier".into(),
            deterministic: true,
            seed: self.seed,
            output_dim: Some(self.class_names.len()),
        }
    }

    fn class_names(&self) -> Result<&[String]> {
        if self.class_names.is_empty() {
            return Err(Error::ClassSetUndefined);
        }
        Ok(&self.class_names)
    }

    fn classify(&self, image: &ImageTensor) -> Result<ScoreVector> {
        let names = self.class_names()?.to_vec();
        let scores = self.logits(&self.features(image)?)?;
        ScoreVector::new(scores, names)
    }
}

impl TrainableClassifier for ToyClassifier {
    fn parameters(&self) -> ParameterSet {
        self.params.clone()
    }

    fn set_parameters(&mut self, params: ParameterSet) -> Result<()> {
        let previous = std::mem::replace(&mut self.params, params);
        if let Err(e) = self.check() {
            self.params = previous;
            return Err(e);
        }
        Ok(())
    }

    fn head_loss_and_gradient(
        &self,
        batch: &[(&ImageTensor, usize)],
    ) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        let feats: Vec<(Vec<f64>, usize)> = batch
            .iter()
            .map(|(img, y)| Ok((self.features(img)?, *y)))
            .collect::<Result<_>>()?;
        self.loss_and_gradient_from_features(&feats)
    }
}
