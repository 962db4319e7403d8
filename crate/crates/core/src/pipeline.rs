//! The two stages end to end: weakness identification (caption, perturb,
//! filter, edit, evaluate) and reinforcement (fine-tune, blend, compare).
//!
//! Every invocation gets a fresh directory under the run root:
//!
//! ```text
//! runs/{run_id}/
//!   manifest.json        written last
//!   config.toml          resolved configuration
//!   captions.jsonl       stress test only
//!   edits.jsonl
//!   originals/           source images and their manifest
//!   counterfactuals/     PNGs, metadata.jsonl, manifest.jsonl
//!   reports/
//!   params/              reinforcement only
//! ```
//!
//! The reinforcement stage reads only files written by a stress-test run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::augment_set;
use crate::backends::toy::ToyClassifier;
use crate::backends::{BackendDescriptor, Backends, Classifier, ImageTensor, TrainableClassifier};
use crate::config::Config;
use crate::editing::{write_counterfactual_set, CounterfactualEditor, CounterfactualExample, TauCandidate};
use crate::error::{io_at, Error, Result};
use crate::evaluation::{
    build_weakness_report, per_class_acc5, ComparisonReport, EvalReport, LabeledItem, LabeledSet, LoadedSet,
    SetFailure,
};
use crate::imageio;
use crate::perturbation::{filter_edits, generate_edits, load_synonyms, CaptionEdit, Verdict};
use crate::reinforcement::{reinforce, split_train_val, train_arm, TrainingRecord};
use crate::util;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SET_MANIFEST: &str = "manifest.jsonl";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    StressTest,
    Reinforce,
}

impl Stage {
    fn prefix(self) -> &'static str {
        match self {
            Stage::StressTest => "stress",
            Stage::Reinforce => "reinforce",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub stage: Stage,
    pub config_hash: String,
    pub backend_descriptors: Vec<BackendDescriptor>,
    pub seeds: BTreeMap<String, u64>,
    /// Artifact name to path relative to the run directory.
    pub artifact_paths: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_run: Option<String>,
    pub counts: BTreeMap<String, usize>,
    pub timestamps: Timestamps,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let m: RunManifest = util::read_json(&run_dir.join(MANIFEST_FILE))?;
        if m.schema_version != MANIFEST_SCHEMA {
            return Err(Error::SchemaVersion {
                expected: MANIFEST_SCHEMA,
                found: m.schema_version,
            });
        }
        Ok(m)
    }

    /// Checks that every referenced artifact exists under `run_dir`.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for (name, rel) in &self.artifact_paths {
            if !run_dir.join(rel).exists() {
                return Err(Error::invalid("manifest", format!("artifact `{name}` missing at {rel}")));
            }
        }
        Ok(())
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Creates `{prefix}-{hash8}-{seq}` under the run root with the next free
/// sequence number. Existing runs are never reused.
fn allocate_run(root: &Path, stage: Stage, config_hash: &str) -> Result<(String, PathBuf)> {
    io_at(root, std::fs::create_dir_all(root))?;
    let stem = format!("{}-{}-", stage.prefix(), &config_hash[..8]);
    let mut next = 1 + io_at(root, std::fs::read_dir(root))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_prefix(&stem).and_then(|s| s.parse::<usize>().ok())
        })
        .max()
        .unwrap_or(0);
    loop {
        let id = format!("{stem}{next:03}");
        let dir = root.join(&id);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => next += 1,
            Err(e) => return Err(Error::File { path: dir, source: e }),
        }
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))?;
    Ok(pool.install(f))
}

fn class_universe(config: &Config, classifier: &dyn Classifier) -> Result<Vec<String>> {
    match &config.data.classes {
        Some(p) => util::read_json(p),
        None => Ok(classifier.class_names()?.to_vec()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io_at(path, std::fs::write(path, text))
}

/// Saves images under `dir` with a `manifest.jsonl` of `{image, label}`.
fn write_image_set(dir: &Path, items: &[(ImageTensor, String)], names: &[String]) -> Result<()> {
    io_at(dir, std::fs::create_dir_all(dir))?;
    let mut records = Vec::with_capacity(items.len());
    for ((img, label), name) in items.iter().zip(names) {
        imageio::save_png(&dir.join(name), img)?;
        records.push(LabeledItem {
            image: name.clone(),
            label: label.clone(),
        });
    }
    util::write_jsonl(&dir.join(SET_MANIFEST), &records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub image_id: String,
    pub gt_class: String,
    #[serde(flatten)]
    pub edit: CaptionEdit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub image_id: String,
    pub gt_class: String,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbed: Option<String>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauLog {
    pub image_id: String,
    pub perturbed: String,
    pub selected: Option<f64>,
    pub candidates: Vec<TauCandidate>,
}

#[derive(Default)]
struct ItemOutcome {
    caption: Option<CaptionRecord>,
    edits: Vec<EditRecord>,
    examples: Vec<CounterfactualExample>,
    tau_logs: Vec<TauLog>,
    skipped: Vec<SkipRecord>,
}

fn process_item(
    image: &ImageTensor,
    gt_class: &str,
    config: &Config,
    backends: &Backends,
    policy: &crate::perturbation::FilterPolicy,
) -> ItemOutcome {
    let mut out = ItemOutcome::default();
    let skip = |stage: &str, perturbed: Option<String>, reason: String| SkipRecord {
        image_id: image.id().to_string(),
        gt_class: gt_class.to_string(),
        stage: stage.into(),
        perturbed,
        reason,
    };
    let caption = match backends.captioner.caption(image, config.stress.caption_min_words, config.stress.repetition_penalty) {
        Ok(c) => c,
        Err(e) => {
            out.skipped.push(skip("caption", None, e.to_string()));
            return out;
        }
    };
    out.caption = Some(CaptionRecord {
        image_id: image.id().to_string(),
        caption: caption.clone(),
    });
    let edits = generate_edits(&caption, &config.stress.factors, config.stress.n_edits_per_factor, backends.perturber.as_ref())
        .and_then(|e| filter_edits(&e, gt_class, policy, backends.embedder.as_ref()));
    let edits = match edits {
        Ok(e) => e,
        Err(e) => {
            out.skipped.push(skip("perturb", None, e.to_string()));
            return out;
        }
    };
    out.edits = edits
        .iter()
        .map(|e| EditRecord {
            image_id: image.id().to_string(),
            gt_class: gt_class.to_string(),
            edit: e.clone(),
        })
        .collect();
    let accepted: Vec<&CaptionEdit> = edits.iter().filter(|e| e.is_accepted()).collect();
    if accepted.is_empty() {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for e in &edits {
            let v = e
                .verdict
                .and_then(|v| serde_json::to_value(v).ok())
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_else(|| "none".into());
            *counts.entry(v).or_default() += 1;
        }
        let summary: Vec<String> = counts.iter().map(|(v, n)| format!("{v} x{n}")).collect();
        out.skipped.push(skip(
            "filter",
            None,
            format!("no accepted edit ({})", if summary.is_empty() { "none generated".into() } else { summary.join(", ") }),
        ));
        return out;
    }
    let generator = match backends.generator_for(image.shape()) {
        Ok(g) => g,
        Err(e) => {
            out.skipped.push(skip("edit", None, e.to_string()));
            return out;
        }
    };
    let editor = CounterfactualEditor::new(generator.as_ref(), backends.encoder.as_ref(), config.editor_config());
    let prepared = match editor.prepare(image, &caption) {
        Ok(p) => p,
        Err(e) => {
            out.skipped.push(skip("invert", None, e.to_string()));
            return out;
        }
    };
    for edit in accepted {
        match editor.select_tau(&prepared, edit, gt_class) {
            Ok((example, candidates)) => {
                out.tau_logs.push(TauLog {
                    image_id: image.id().to_string(),
                    perturbed: edit.perturbed.clone(),
                    selected: Some(example.tau),
                    candidates,
                });
                out.examples.push(example);
            }
            Err(e) => {
                out.tau_logs.push(TauLog {
                    image_id: image.id().to_string(),
                    perturbed: edit.perturbed.clone(),
                    selected: None,
                    candidates: Vec::new(),
                });
                out.skipped.push(skip("edit", Some(edit.perturbed.clone()), e.to_string()));
            }
        }
    }
    out
}

#[derive(Debug)]
pub struct StressTestOutcome {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub t_prime: LabeledSet,
    pub report: EvalReport,
    pub manifest: RunManifest,
}

/// Runs weakness identification on the configured dataset.
pub fn run_stress_test(config: &Config) -> Result<StressTestOutcome> {
    let started = now_unix();
    config.validate()?;
    let backends = Backends::from_config(&config.backends, &config.editing)?;
    let classifier = backends.classifier.as_classifier();
    let classes = class_universe(config, classifier)?;
    let t_set = LabeledSet::from_manifest(&config.data.manifest, "T", &classes)?;
    let t = t_set.load()?;
    let mut policy = config.filter_policy.clone();
    if let Some(p) = &config.data.synonyms {
        for (class, syn) in load_synonyms(p)? {
            policy.class_synonyms.entry(class).or_default().extend(syn);
        }
    }
    let shape = t.items[0].0.shape();
    let descriptors = backends.descriptors(shape)?;

    let config_hash = config.hash();
    let (run_id, run_dir) = allocate_run(&config.run_root, Stage::StressTest, &config_hash)?;
    log::info!("stress test {run_id}: {} images", t.len());

    let outcomes: Vec<ItemOutcome> = with_pool(config.jobs, || {
        t.items
            .par_iter()
            .map(|(img, label)| process_item(img, label, config, &backends, &policy))
            .collect()
    })?;

    let mut captions = Vec::new();
    let mut edits = Vec::new();
    let mut examples = Vec::new();
    let mut tau_logs = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        captions.extend(o.caption);
        edits.extend(o.edits);
        examples.extend(o.examples);
        tau_logs.extend(o.tau_logs);
        skipped.extend(o.skipped);
    }

    let reports = run_dir.join("reports");
    io_at(&reports, std::fs::create_dir_all(&reports))?;
    util::write_jsonl(&reports.join("skipped.jsonl"), &skipped)?;
    util::write_jsonl(&reports.join("tau.jsonl"), &tau_logs)?;
    util::write_jsonl(&run_dir.join("captions.jsonl"), &captions)?;
    util::write_jsonl(&run_dir.join("edits.jsonl"), &edits)?;
    write_text(&run_dir.join("config.toml"), &config.to_toml_string()?)?;
    if examples.is_empty() {
        return Err(Error::NoCounterfactuals.context(format!("run {run_id}")));
    }

    let original_names: Vec<String> = t.items.iter().map(|(img, _)| format!("{}.png", img.id())).collect();
    write_image_set(&run_dir.join("originals"), &t.items, &original_names)?;

    let cf_dir = run_dir.join("counterfactuals");
    let records = write_counterfactual_set(&cf_dir, &examples)?;
    let cf_items: Vec<LabeledItem> = records
        .iter()
        .map(|r| LabeledItem {
            image: r.image.clone(),
            label: r.gt_class.clone(),
        })
        .collect();
    let t_prime_set = LabeledSet::new("T_prime", cf_items, classes.clone(), &cf_dir)?;
    t_prime_set.write_manifest(&cf_dir.join(SET_MANIFEST))?;

    let t_prime = LoadedSet::new(
        "T_prime",
        examples.iter().map(|e| (e.image.clone(), e.gt_class.clone())).collect(),
    )?;
    let factors: Vec<_> = examples.iter().map(|e| Some(e.edit.factor)).collect();
    let report = build_weakness_report(&t, &t_prime, &factors, classifier, &classifier.descriptor().name)?;
    report.write_json(&reports.join("weakness.json"))?;
    report.write_csv(&reports.join("weakness.csv"))?;

    let accepted = edits.iter().filter(|e| e.edit.verdict == Some(Verdict::Accepted)).count();
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA,
        run_id: run_id.clone(),
        stage: Stage::StressTest,
        config_hash,
        backend_descriptors: descriptors,
        seeds: [("seed".to_string(), config.seed)].into(),
        artifact_paths: [
            ("captions", "captions.jsonl"),
            ("edits", "edits.jsonl"),
            ("originals", "originals/manifest.jsonl"),
            ("counterfactuals", "counterfactuals/manifest.jsonl"),
            ("counterfactual_metadata", "counterfactuals/metadata.jsonl"),
            ("report", "reports/weakness.json"),
            ("report_csv", "reports/weakness.csv"),
            ("skipped", "reports/skipped.jsonl"),
            ("tau_log", "reports/tau.jsonl"),
            ("config", "config.toml"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect(),
        source_run: None,
        counts: [
            ("images", t.len()),
            ("captions", captions.len()),
            ("edits", edits.len()),
            ("edits_accepted", accepted),
            ("counterfactuals", examples.len()),
            ("skipped", skipped.len()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
        timestamps: Timestamps {
            started_unix: started,
            finished_unix: now_unix(),
        },
    };
    manifest.verify(&run_dir)?;
    util::write_json_pretty(&run_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(StressTestOutcome {
        run_id,
        run_dir,
        t_prime: t_prime_set,
        report,
        manifest,
    })
}

/// Locates a completed stress-test run by id.
pub fn find_stress_run(run_root: &Path, run_id: &str) -> Result<(PathBuf, RunManifest)> {
    let dir = run_root.join(run_id);
    if run_id.is_empty() || run_id.contains(['/', '\\']) || !dir.join(MANIFEST_FILE).is_file() {
        return Err(Error::RunNotFound(run_id.to_string()));
    }
    let manifest = RunManifest::load(&dir)?;
    if manifest.stage != Stage::StressTest {
        return Err(Error::RunNotFound(format!("{run_id} (not a stress-test run)")));
    }
    Ok((dir, manifest))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub counterfactual: TrainingRecord,
    pub counterfactual_alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard: Option<TrainingRecord>,
    pub train_items: usize,
    pub val_items: usize,
}

#[derive(Debug)]
pub struct ReinforceOutcome {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub comparison: ComparisonReport,
    pub training: TrainingSummary,
    pub manifest: RunManifest,
}

fn load_eval_sets(config: &Config, classes: &[String]) -> (Vec<LoadedSet>, Vec<SetFailure>) {
    let mut sets = Vec::new();
    let mut failures = Vec::new();
    for spec in &config.reinforce.eval_sets {
        match LabeledSet::from_manifest(&spec.manifest, &spec.name, classes).and_then(|s| s.load()) {
            Ok(s) => sets.push(s),
            Err(e) => failures.push(SetFailure {
                set: spec.name.clone(),
                error: e.to_string(),
            }),
        }
    }
    (sets, failures)
}

fn save_classifier(base: &ToyClassifier, params: &crate::reinforcement::ParameterSet, dir: &Path) -> Result<()> {
    let mut c = base.clone();
    c.set_parameters(params.clone())?;
    c.save(dir)
}

/// Fine-tunes on the counterfactuals of `stress_run_id`, blends, and
/// compares against the starting classifier on every evaluation set.
pub fn run_reinforcement(config: &Config, stress_run_id: &str) -> Result<ReinforceOutcome> {
    let started = now_unix();
    config.validate()?;
    let (stress_dir, _) = find_stress_run(&config.run_root, stress_run_id)?;
    let backends = Backends::from_config(&config.backends, &config.editing)?;
    let base = backends.classifier.trainable()?.clone();
    let classes = base.class_names()?.to_vec();

    let cf = LabeledSet::from_manifest(&stress_dir.join("counterfactuals").join(SET_MANIFEST), "T_prime", &classes)
        .map_err(|e| match e.root() {
            Error::Invalid { .. } => Error::NoCounterfactuals.context(format!("run {stress_run_id}")),
            _ => e,
        })?
        .load()?;
    let (cf_train, cf_val) = split_train_val(&cf, config.reinforce.val_fraction, config.seed)?;

    let standard = if config.reinforce.standard_arm {
        let originals =
            LabeledSet::from_manifest(&stress_dir.join("originals").join(SET_MANIFEST), "originals", &classes)?.load()?;
        let (o_train, o_val) = split_train_val(&originals, config.reinforce.val_fraction, config.seed)?;
        let augmented = augment_set(&o_train, &config.augment, config.seed)?;
        Some(train_arm(&base, &augmented, &o_val, &config.train)?)
    } else {
        None
    };

    let (eval_sets, load_failures) = load_eval_sets(config, &classes);
    let shape = cf.items[0].0.shape();
    let descriptors = backends.descriptors(shape)?;
    let config_hash = config.hash();

    let mut clf = base.clone();
    let theta0 = clf.parameters();
    let result = with_pool(config.jobs, || {
        reinforce(
            &mut clf,
            &cf_train,
            &cf_val,
            &eval_sets,
            &config.train,
            standard.as_ref().map(|s| &s.blended),
        )
    })??;
    let mut comparison = result.comparison;
    comparison.failures.extend(load_failures);
    if config.reinforce.eval_sets.is_empty() {
        comparison.notes.push("no evaluation sets configured".into());
    }

    let (run_id, run_dir) = allocate_run(&config.run_root, Stage::Reinforce, &config_hash)?;
    log::info!("reinforcement {run_id} from {stress_run_id}: {} train, {} val", cf_train.len(), cf_val.len());
    let params = run_dir.join("params");
    save_classifier(&base, &theta0, &params.join("baseline"))?;
    save_classifier(&base, &result.arm.theta1, &params.join("theta1"))?;
    save_classifier(&base, &result.arm.blended, &params.join("reinforced"))?;
    if let Some(s) = &standard {
        save_classifier(&base, &s.blended, &params.join("standard"))?;
    }
    let reports = run_dir.join("reports");
    io_at(&reports, std::fs::create_dir_all(&reports))?;
    comparison.write_json(&reports.join("comparison.json"))?;
    comparison.write_csv(&reports.join("comparison.csv"))?;
    let training = TrainingSummary {
        counterfactual: result.arm.record.clone(),
        counterfactual_alpha: result.arm.alpha,
        standard: standard.as_ref().map(|s| s.record.clone()),
        train_items: cf_train.len(),
        val_items: cf_val.len(),
    };
    util::write_json_pretty(&reports.join("training.json"), &training)?;
    write_text(&run_dir.join("config.toml"), &config.to_toml_string()?)?;

    let mut artifacts: BTreeMap<String, String> = [
        ("parameters", "params/reinforced"),
        ("parameters_theta1", "params/theta1"),
        ("parameters_baseline", "params/baseline"),
        ("report", "reports/comparison.json"),
        ("report_csv", "reports/comparison.csv"),
        ("training", "reports/training.json"),
        ("config", "config.toml"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    if standard.is_some() {
        artifacts.insert("parameters_standard".into(), "params/standard".into());
    }
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA,
        run_id: run_id.clone(),
        stage: Stage::Reinforce,
        config_hash,
        backend_descriptors: descriptors,
        seeds: [("seed".to_string(), config.seed), ("train".to_string(), config.train.seed)].into(),
        artifact_paths: artifacts,
        source_run: Some(stress_run_id.to_string()),
        counts: [
            ("counterfactuals", cf.len()),
            ("train", cf_train.len()),
            ("val", cf_val.len()),
            ("eval_sets", eval_sets.len()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
        timestamps: Timestamps {
            started_unix: started,
            finished_unix: now_unix(),
        },
    };
    manifest.verify(&run_dir)?;
    util::write_json_pretty(&run_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(ReinforceOutcome {
        run_id,
        run_dir,
        comparison,
        training,
        manifest,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetAccuracy {
    pub set: String,
    pub items: usize,
    /// Per-class top-5 accuracy, with an `all` entry last.
    pub acc5: Vec<(String, f64)>,
}

/// Top-5 accuracy of the configured classifier (or the one stored in
/// `params`) on each manifest.
pub fn evaluate_manifests(config: &Config, params: Option<&Path>, manifests: &[PathBuf]) -> Result<Vec<SetAccuracy>> {
    let clf: Box<dyn Classifier> = match params {
        Some(dir) => Box::new(ToyClassifier::load(dir)?),
        None => {
            let b = Backends::from_config(&config.backends, &config.editing)?;
            match b.classifier {
                crate::backends::ClassifierBackend::Toy(c) => Box::new(c),
                crate::backends::ClassifierBackend::Remote(a) => Box::new(RemoteClassifier(a)),
            }
        }
    };
    let classes = class_universe(config, clf.as_ref())?;
    with_pool(config.jobs, || {
        manifests
            .iter()
            .map(|m| {
                let name = m.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let set = LabeledSet::from_manifest(m, &name, &classes)?.load()?;
                Ok(SetAccuracy {
                    set: name,
                    items: set.len(),
                    acc5: per_class_acc5(&set, clf.as_ref())?,
                })
            })
            .collect()
    })?
}

struct RemoteClassifier(std::sync::Arc<crate::backends::stdio::StdioAdapter>);

impl Classifier for RemoteClassifier {
    fn descriptor(&self) -> BackendDescriptor {
        Classifier::descriptor(self.0.as_ref())
    }

    fn class_names(&self) -> Result<&[String]> {
        self.0.class_names()
    }

    fn classify(&self, image: &ImageTensor) -> Result<crate::backends::ScoreVector> {
        self.0.classify(image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_ids_are_sequential_and_never_reused() {
        let dir = tempfile::tempdir().unwrap();
        let hash = "0123456789abcdef";
        let (a, _) = allocate_run(dir.path(), Stage::StressTest, hash).unwrap();
        let (b, _) = allocate_run(dir.path(), Stage::StressTest, hash).unwrap();
        let (c, _) = allocate_run(dir.path(), Stage::Reinforce, hash).unwrap();
        assert_eq!(a, "stress-01234567-001");
        assert_eq!(b, "stress-01234567-002");
        assert_eq!(c, "reinforce-01234567-001");
    }

    #[test]
    fn missing_run_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let err = find_stress_run(dir.path(), "stress-deadbeef-009").err().unwrap();
        assert!(matches!(err, Error::RunNotFound(ref id) if id == "stress-deadbeef-009"));
        assert!(err.to_string().contains("stress-deadbeef-009"));
    }

    #[test]
    fn manifest_verification_catches_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "x").unwrap();
        let mut m = RunManifest {
            schema_version: MANIFEST_SCHEMA,
            run_id: "r".into(),
            stage: Stage::StressTest,
            config_hash: "h".into(),
            backend_descriptors: vec![],
            seeds: BTreeMap::new(),
            artifact_paths: [("a".to_string(), "a.txt".to_string())].into(),
            source_run: None,
            counts: BTreeMap::new(),
            timestamps: Timestamps {
                started_unix: 0,
                finished_unix: 0,
            },
        };
        m.verify(dir.path()).unwrap();
        m.artifact_paths.insert("b".into(), "b.txt".into());
        assert!(m.verify(dir.path()).is_err());
    }
}
