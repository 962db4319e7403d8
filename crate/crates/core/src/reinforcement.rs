//! Head-only fine-tuning on counterfactuals and weight-space blending with
//! the original parameters.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{Classifier, TrainableClassifier};
use crate::error::{io_at, Error, Result};
use crate::evaluation::{self, ComparisonReport, ComparisonRow, LoadedSet, SetFailure};
use crate::util::{self, stable_hash_parts};

pub const PARAMS_INDEX: &str = "index.json";
const DTYPE: &str = "f64le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named flat parameter arrays, some of which form the classification head.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    groups: BTreeMap<String, ParamGroup>,
    head_groups: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    shape: Vec<usize>,
    dtype: String,
    file: String,
    is_head: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamsIndex {
    schema_version: u32,
    groups: BTreeMap<String, IndexEntry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        values: Vec<f64>,
        is_head: bool,
    ) -> Result<&mut Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "group `{name}`: shape {shape:?} vs {} values",
                values.len()
            )));
        }
        if !util::all_finite(&values) {
            return Err(Error::invalid("parameters", format!("group `{name}` has non-finite values")));
        }
        self.groups.insert(name.to_string(), ParamGroup { shape, values });
        if is_head {
            self.head_groups.insert(name.to_string());
        } else {
            self.head_groups.remove(name);
        }
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.get(name)
    }

    pub fn values(&self, name: &str) -> Result<&[f64]> {
        self.groups
            .get(name)
            .map(|g| g.values.as_slice())
            .ok_or_else(|| Error::invalid("parameters", format!("missing group `{name}`")))
    }

    pub fn set_values(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let g = self
            .groups
            .get_mut(name)
            .ok_or_else(|| Error::invalid("parameters", format!("missing group `{name}`")))?;
        if g.values.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "group `{name}` holds {} values, got {}",
                g.values.len(),
                values.len()
            )));
        }
        if !util::all_finite(&values) {
            return Err(Error::invalid("parameters", format!("group `{name}` would become non-finite")));
        }
        g.values = values;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn groups(&self) -> &BTreeMap<String, ParamGroup> {
        &self.groups
    }

    pub fn head_groups(&self) -> &BTreeSet<String> {
        &self.head_groups
    }

    pub fn is_head(&self, name: &str) -> bool {
        self.head_groups.contains(name)
    }

    /// Writes one little-endian `f64` file per group plus `index.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io_at(dir, std::fs::create_dir_all(dir))?;
        let mut index = ParamsIndex {
            schema_version: 1,
            groups: BTreeMap::new(),
        };
        for (name, g) in &self.groups {
            let file = format!("{name}.bin");
            let bytes: Vec<u8> = g.values.iter().flat_map(|v| v.to_le_bytes()).collect();
            io_at(dir.join(&file), std::fs::write(dir.join(&file), bytes))?;
            index.groups.insert(
                name.clone(),
                IndexEntry {
                    shape: g.shape.clone(),
                    dtype: DTYPE.into(),
                    file,
                    is_head: self.is_head(name),
                },
            );
        }
        util::write_json_pretty(&dir.join(PARAMS_INDEX), &index)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: ParamsIndex = util::read_json(&dir.join(PARAMS_INDEX))?;
        if index.schema_version != 1 {
            return Err(Error::SchemaVersion {
                expected: 1,
                found: index.schema_version,
            });
        }
        let mut out = ParameterSet::new();
        for (name, entry) in index.groups {
            if entry.dtype != DTYPE {
                return Err(Error::invalid("parameters", format!("group `{name}` has dtype {}", entry.dtype)));
            }
            let path = dir.join(&entry.file);
            let bytes = io_at(&path, std::fs::read(&path))?;
            if bytes.len() % 8 != 0 {
                return Err(Error::invalid("parameters", format!("{} is not a whole number of f64s", path.display())));
            }
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            out.insert(&name, entry.shape, values, entry.is_head)?;
        }
        Ok(out)
    }

    fn check_compatible(&self, other: &ParameterSet) -> Result<()> {
        if !self.groups.keys().eq(other.groups.keys()) {
            return Err(Error::ShapeMismatch(format!(
                "group names differ: {:?} vs {:?}",
                self.groups.keys().collect::<Vec<_>>(),
                other.groups.keys().collect::<Vec<_>>()
            )));
        }
        for (name, g) in &self.groups {
            if other.groups[name].shape != g.shape {
                return Err(Error::ShapeMismatch(format!(
                    "group `{name}`: {:?} vs {:?}",
                    g.shape, other.groups[name].shape
                )));
            }
        }
        Ok(())
    }
}

/// `(1 - alpha) θ₀ + alpha θ₁` on the groups in `scope`; other groups are
/// copied from `theta0`.
pub fn blend_parameters(
    theta0: &ParameterSet,
    theta1: &ParameterSet,
    alpha: f64,
    scope: &BTreeSet<String>,
) -> Result<ParameterSet> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("{alpha} outside [0, 1]")));
    }
    theta0.check_compatible(theta1)?;
    if let Some(missing) = scope.iter().find(|s| !theta0.groups.contains_key(*s)) {
        return Err(Error::invalid("scope", format!("unknown group `{missing}`")));
    }
    let mut out = theta0.clone();
    for name in scope {
        let blended = util::axpby(
            1.0 - alpha,
            &theta0.groups[name].values,
            alpha,
            &theta1.groups[name].values,
        );
        out.set_values(name, blended)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Smallest rise in validation top-5 accuracy (as a fraction) that resets
    /// the patience counter. Zero or less disables early stopping.
    pub min_delta: f64,
    pub patience: usize,
    pub alpha: f64,
    pub seed: u64,
    pub momentum: f64,
    /// Blend towards the original head after every epoch instead of once.
    pub blend_per_epoch: bool,
    /// Pick `alpha` from `0.0, 0.1, ..., 1.0` by validation accuracy.
    pub alpha_search: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 1e-4,
            max_epochs: 50,
            min_delta: 0.005,
            patience: 5,
            alpha: 0.3,
            seed: 0,
            momentum: 0.0,
            blend_per_epoch: false,
            alpha_search: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", format!("{} outside [0, 1]", self.alpha)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must be in [0, 1)"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc5: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub initial_val_acc5: f64,
    pub epoch_metrics: Vec<EpochMetrics>,
    pub stopped_early: bool,
    pub epochs_run: usize,
}

fn label_indices(set: &LoadedSet, classifier: &dyn Classifier) -> Result<Vec<usize>> {
    set.items
        .iter()
        .map(|(_, label)| classifier.class_index(label))
        .collect()
}

/// Mini-batch SGD on the head groups only, with early stopping on
/// validation top-5 accuracy. Leaves the classifier holding the final
/// parameters and returns them.
pub fn fine_tune_head(
    classifier: &mut dyn TrainableClassifier,
    train: &LoadedSet,
    val: &LoadedSet,
    config: &TrainConfig,
) -> Result<(ParameterSet, TrainingRecord)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training data", "train and validation sets must be nonempty"));
    }
    let theta0 = classifier.parameters();
    if theta0.head_groups().is_empty() {
        return Err(Error::invalid("parameters", "classifier exposes no head groups"));
    }
    let labels = label_indices(train, classifier)?;
    let mut velocity: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let initial = evaluation::mean_acc5(val, classifier)?;
    let mut best = initial / 100.0;
    let mut wait = 0;
    let mut record = TrainingRecord {
        initial_val_acc5: util::round2(initial),
        epoch_metrics: Vec::new(),
        stopped_early: false,
        epochs_run: 0,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash_parts(&[
            &config.seed.to_le_bytes(),
            &(epoch as u64).to_le_bytes(),
        ]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| (&train.items[i].0, labels[i])).collect();
            let (loss, grads) = classifier.head_loss_and_gradient(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            let mut params = classifier.parameters();
            for (name, g) in grads {
                if !params.is_head(&name) {
                    return Err(Error::invalid(
                        "gradient",
                        format!("backend returned a gradient for non-head group `{name}`"),
                    ));
                }
                let v = velocity.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                *v = util::axpby(config.momentum, v, 1.0, &g);
                let updated = util::axpby(1.0, params.values(&name)?, -config.learning_rate, v);
                if !util::all_finite(&updated) {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                params.set_values(&name, updated)?;
            }
            classifier.set_parameters(params)?;
        }
        if config.blend_per_epoch {
            let scope = theta0.head_groups().clone();
            let blended = blend_parameters(&theta0, &classifier.parameters(), config.alpha, &scope)?;
            classifier.set_parameters(blended)?;
        }
        let val_acc5 = evaluation::mean_acc5(val, classifier)?;
        record.epoch_metrics.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_acc5: util::round2(val_acc5),
        });
        record.epochs_run = epoch;
        if config.min_delta > 0.0 {
            if val_acc5 / 100.0 - best >= config.min_delta {
                best = val_acc5 / 100.0;
                wait = 0;
            } else {
                wait += 1;
                if wait >= config.patience {
                    record.stopped_early = epoch < config.max_epochs;
                    break;
                }
            }
        }
    }
    Ok((classifier.parameters(), record))
}

/// Result of one fine-tune-and-blend arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmOutcome {
    pub theta1: ParameterSet,
    pub blended: ParameterSet,
    pub alpha: f64,
    pub record: TrainingRecord,
}

/// Fine-tunes a copy of `classifier` and blends the head back towards the
/// starting parameters. With `alpha_search`, the blend weight with the best
/// validation accuracy wins (smallest weight on ties).
pub fn train_arm<C>(classifier: &C, train: &LoadedSet, val: &LoadedSet, config: &TrainConfig) -> Result<ArmOutcome>
where
    C: TrainableClassifier + Clone,
{
    let theta0 = classifier.parameters();
    let mut work = classifier.clone();
    let (theta1, record) = fine_tune_head(&mut work, train, val, config)?;
    let scope = theta0.head_groups().clone();
    let alpha = if config.alpha_search {
        let mut best = (f64::NEG_INFINITY, config.alpha);
        for i in 0..=10 {
            let a = i as f64 / 10.0;
            work.set_parameters(blend_parameters(&theta0, &theta1, a, &scope)?)?;
            let acc = evaluation::mean_acc5(val, &work)?;
            if acc > best.0 {
                best = (acc, a);
            }
        }
        best.1
    } else {
        config.alpha
    };
    let blended = if config.blend_per_epoch {
        theta1.clone()
    } else {
        blend_parameters(&theta0, &theta1, alpha, &scope)?
    };
    Ok(ArmOutcome {
        theta1,
        blended,
        alpha,
        record,
    })
}

fn with_params<C: TrainableClassifier + Clone>(classifier: &C, params: &ParameterSet) -> Result<C> {
    let mut c = classifier.clone();
    c.set_parameters(params.clone())?;
    Ok(c)
}

/// Baseline / optional standard-augmentation / counterfactual accuracy per
/// class of every evaluation set. A set that fails to evaluate is recorded
/// and the others still run.
pub fn compare_on_sets<C>(
    classifier: &C,
    baseline: &ParameterSet,
    standard: Option<&ParameterSet>,
    counterfactual: &ParameterSet,
    eval_sets: &[LoadedSet],
    model_name: &str,
    alpha: f64,
) -> Result<ComparisonReport>
where
    C: TrainableClassifier + Clone,
{
    let base = with_params(classifier, baseline)?;
    let cf = with_params(classifier, counterfactual)?;
    let std_clf = standard.map(|p| with_params(classifier, p)).transpose()?;
    let mut report = ComparisonReport::new(model_name, alpha);
    if standard.is_none() {
        report.notes.push("standard augmentation arm not run".into());
    }
    for set in eval_sets {
        let outcome = (|| -> Result<Vec<ComparisonRow>> {
            let b = evaluation::per_class_acc5(set, &base)?;
            let c = evaluation::per_class_acc5(set, &cf)?;
            let s = std_clf
                .as_ref()
                .map(|s| evaluation::per_class_acc5(set, s))
                .transpose()?;
            Ok(b.iter()
                .zip(&c)
                .enumerate()
                .map(|(i, ((class, bv), (_, cv)))| ComparisonRow {
                    set: set.name.clone(),
                    class: class.clone(),
                    baseline: *bv,
                    standard: s.as_ref().map(|s| s[i].1),
                    counterfactual: *cv,
                })
                .collect())
        })();
        match outcome {
            Ok(rows) => report.rows.extend(rows),
            Err(e) => report.failures.push(SetFailure {
                set: set.name.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reinforced {
    pub arm: ArmOutcome,
    pub comparison: ComparisonReport,
}

/// Fine-tunes the head on counterfactuals, blends, and compares the result
/// with the starting classifier on every evaluation set. The classifier is
/// left holding the blended parameters.
pub fn reinforce<C>(
    classifier: &mut C,
    cf_train: &LoadedSet,
    val: &LoadedSet,
    eval_sets: &[LoadedSet],
    config: &TrainConfig,
    standard: Option<&ParameterSet>,
) -> Result<Reinforced>
where
    C: TrainableClassifier + Clone,
{
    let theta0 = classifier.parameters();
    let arm = train_arm(classifier, cf_train, val, config)?;
    let name = classifier.descriptor().name;
    let comparison = compare_on_sets(classifier, &theta0, standard, &arm.blended, eval_sets, &name, arm.alpha)?;
    classifier.set_parameters(arm.blended.clone())?;
    Ok(Reinforced { arm, comparison })
}

/// Seeded 80/20 style split of a set into `(train, validation)`.
pub fn split_train_val(set: &LoadedSet, val_fraction: f64, seed: u64) -> Result<(LoadedSet, LoadedSet)> {
    if !(0.0 < val_fraction && val_fraction < 1.0) {
        return Err(Error::invalid("val_fraction", format!("{val_fraction} outside (0, 1)")));
    }
    if set.len() < 2 {
        return Err(Error::invalid("labeled set", "need at least two items to split"));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((set.len() as f64 * val_fraction).round() as usize).clamp(1, set.len() - 1);
    let pick = |ids: &[usize]| ids.iter().map(|i| set.items[*i].clone()).collect::<Vec<_>>();
    Ok((
        LoadedSet::new(format!("{}_train", set.name), pick(&idx[n_val..]))?,
        LoadedSet::new(format!("{}_val", set.name), pick(&idx[..n_val]))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pset(head: &[f64], body: &[f64]) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("head.w", vec![head.len()], head.to_vec(), true).unwrap();
        p.insert("body.w", vec![body.len()], body.to_vec(), false).unwrap();
        p
    }

    fn head_scope() -> BTreeSet<String> {
        ["head.w".to_string()].into()
    }

    #[test]
    fn blend_examples() {
        let t0 = pset(&[1.0, 2.0], &[5.0]);
        let t1 = pset(&[3.0, 6.0], &[9.0]);
        let b = blend_parameters(&t0, &t1, 0.3, &head_scope()).unwrap();
        let h = b.values("head.w").unwrap();
        assert!((h[0] - 1.6).abs() < 1e-15 && (h[1] - 3.2).abs() < 1e-15);
        assert_eq!(b.values("body.w").unwrap(), &[5.0]);
        assert_eq!(blend_parameters(&t0, &t1, 0.0, &head_scope()).unwrap(), t0);
        let one = blend_parameters(&t0, &t1, 1.0, &head_scope()).unwrap();
        assert_eq!(one.values("head.w").unwrap(), t1.values("head.w").unwrap());
        assert_eq!(one.values("body.w").unwrap(), t0.values("body.w").unwrap());
    }

    #[test]
    fn blend_rejects_mismatches() {
        let t0 = pset(&[1.0, 2.0], &[5.0]);
        let t1 = pset(&[3.0], &[9.0]);
        assert!(blend_parameters(&t0, &t1, 0.5, &head_scope()).is_err());
        let scope: BTreeSet<String> = ["nope".to_string()].into();
        assert!(blend_parameters(&t0, &t0, 0.5, &scope).is_err());
        assert!(blend_parameters(&t0, &t0, 1.5, &head_scope()).is_err());
    }

    #[test]
    fn parameter_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = pset(&[1.0, -2.5e-300], &[f64::MAX]);
        p.save(dir.path()).unwrap();
        assert_eq!(ParameterSet::load(dir.path()).unwrap(), p);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            alpha: 1.1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
