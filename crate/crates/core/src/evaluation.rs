//! Top-k accuracy, the counterfactual accuracy drop, and weakness /
//! comparison reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{Classifier, ImageTensor, ScoreVector};
use crate::error::{io_at, Error, Result, ResultExt};
use crate::imageio;
use crate::perturbation::VariationFactor;
use crate::util::{self, round2};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOP_K: usize = 5;
pub const TIE_BREAK: &str = "equal scores rank by ascending class index";

/// Whether `gt_class` is among the `k` best scores. Equal scores are ordered
/// by ascending class index.
pub fn acc_at_k(scores: &ScoreVector, gt_class: &str, k: usize) -> Result<bool> {
    if k == 0 || k > scores.len() {
        return Err(Error::invalid("k", format!("{k} outside 1..={}", scores.len())));
    }
    let gt = scores
        .class_names
        .iter()
        .position(|c| c == gt_class)
        .ok_or_else(|| Error::UnknownClass(gt_class.to_string()))?;
    let s = scores.scores[gt];
    let rank = scores
        .scores
        .iter()
        .enumerate()
        .filter(|(j, v)| **v > s || (**v == s && *j < gt))
        .count();
    Ok(rank < k)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub image: String,
    pub label: String,
}

/// A named list of `(image path, label)` pairs. Relative image paths
/// resolve against `root`, normally the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub name: String,
    pub items: Vec<LabeledItem>,
    pub class_universe: Vec<String>,
    pub root: PathBuf,
}

impl LabeledSet {
    pub fn new(
        name: impl Into<String>,
        items: Vec<LabeledItem>,
        class_universe: Vec<String>,
        root: impl Into<PathBuf>,
    ) -> Result<Self> {
        let set = LabeledSet {
            name: name.into(),
            items,
            class_universe,
            root: root.into(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::invalid("labeled set", format!("`{}` is empty", self.name)));
        }
        let universe: BTreeSet<&str> = self.class_universe.iter().map(String::as_str).collect();
        if let Some(item) = self.items.iter().find(|i| !universe.contains(i.label.as_str())) {
            return Err(Error::UnknownClass(item.label.clone()).context(format!(
                "set `{}`, image {}",
                self.name, item.image
            )));
        }
        Ok(())
    }

    /// Reads a JSON-lines manifest of `{image, label}` records.
    pub fn from_manifest(path: &Path, name: &str, class_universe: &[String]) -> Result<Self> {
        let items: Vec<LabeledItem> = util::read_jsonl(path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(name, items, class_universe.to_vec(), root)
            .context_with(|| format!("manifest {}", path.display()))
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        util::write_jsonl(path, &self.items)
    }

    pub fn resolve(&self, item: &LabeledItem) -> PathBuf {
        let p = Path::new(&item.image);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load(&self) -> Result<LoadedSet> {
        let items = self
            .items
            .par_iter()
            .map(|item| {
                let path = self.resolve(item);
                let id = Path::new(&item.image)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| item.image.clone());
                Ok((imageio::load_png(&path, &id)?, item.label.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LoadedSet {
            name: self.name.clone(),
            items,
        })
    }
}

/// A labeled set with its images in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSet {
    pub name: String,
    pub items: Vec<(ImageTensor, String)>,
}

impl LoadedSet {
    pub fn new(name: impl Into<String>, items: Vec<(ImageTensor, String)>) -> Result<Self> {
        let set = LoadedSet {
            name: name.into(),
            items,
        };
        if set.items.is_empty() {
            return Err(Error::invalid("labeled set", format!("`{}` is empty", set.name)));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Per-item top-5 indicators, in item order. With fewer than five classes
/// every class counts as top-5.
pub fn top5_hits(set: &LoadedSet, classifier: &dyn Classifier) -> Result<Vec<bool>> {
    set.items
        .par_iter()
        .map(|(img, label)| {
            let hit = classifier
                .classify(img)
                .and_then(|scores| acc_at_k(&scores, label, TOP_K.min(scores.len())));
            hit.context_with(|| format!("set `{}`, image `{}`", set.name, img.id()))
        })
        .collect()
}

fn percent(hits: impl Iterator<Item = bool>) -> Option<f64> {
    let (n, h) = hits.fold((0usize, 0usize), |(n, h), hit| (n + 1, h + usize::from(hit)));
    (n > 0).then(|| 100.0 * h as f64 / n as f64)
}

/// Mean top-5 accuracy of the set, as a percentage (unrounded).
pub fn mean_acc5(set: &LoadedSet, classifier: &dyn Classifier) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("labeled set", format!("`{}` is empty", set.name)));
    }
    let hits = top5_hits(set, classifier)?;
    Ok(percent(hits.into_iter()).unwrap_or(0.0))
}

/// Difference of two accuracies as printed to two decimals.
pub fn delta_from_percentages(acc_t: f64, acc_t_prime: f64) -> f64 {
    round2(round2(acc_t_prime) - round2(acc_t))
}

/// `mean_acc5(T') - mean_acc5(T)` at two decimals; negative values expose weakness.
pub fn delta_acc5(t: &LoadedSet, t_prime: &LoadedSet, classifier: &dyn Classifier) -> Result<f64> {
    Ok(delta_from_percentages(
        mean_acc5(t, classifier)?,
        mean_acc5(t_prime, classifier)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    #[serde(rename = "acc5_T")]
    pub acc5_t: f64,
    #[serde(rename = "acc5_Tprime")]
    pub acc5_t_prime: f64,
    pub delta: f64,
}

impl ClassRow {
    pub fn new(class: impl Into<String>, acc5_t: f64, acc5_t_prime: f64) -> Self {
        ClassRow {
            class: class.into(),
            acc5_t: round2(acc5_t),
            acc5_t_prime: round2(acc5_t_prime),
            delta: delta_from_percentages(acc5_t, acc5_t_prime),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub factor: VariationFactor,
    pub items: usize,
    #[serde(rename = "acc5_T")]
    pub acc5_t: f64,
    #[serde(rename = "acc5_Tprime")]
    pub acc5_t_prime: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetSizes {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "T_prime")]
    pub t_prime: usize,
}

/// Weakness report: per-class accuracy on the original and counterfactual
/// sets, worst class first, plus an optional per-factor breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub kind: String,
    pub model_name: String,
    pub k: usize,
    pub tie_break: String,
    pub set_sizes: SetSizes,
    pub overall: ClassRow,
    pub per_class: Vec<ClassRow>,
    pub per_factor: Vec<FactorRow>,
    /// Report sections that go beyond per-class accuracy.
    pub extensions: Vec<String>,
    pub missing_metadata: usize,
    pub notes: Vec<String>,
}

pub const WEAKNESS_KIND: &str = "weakness";
pub const COMPARISON_KIND: &str = "comparison";

impl EvalReport {
    /// Builds a report from already-measured per-class accuracies, keeping
    /// the given order apart from the worst-first sort.
    pub fn from_accuracies(model_name: &str, rows: &[(&str, f64, f64)]) -> Self {
        let per_class: Vec<ClassRow> = rows.iter().map(|(c, t, tp)| ClassRow::new(*c, *t, *tp)).collect();
        let n = per_class.len().max(1) as f64;
        let mean_t = per_class.iter().map(|r| r.acc5_t).sum::<f64>() / n;
        let mean_tp = per_class.iter().map(|r| r.acc5_t_prime).sum::<f64>() / n;
        let mut report = EvalReport {
            schema_version: SCHEMA_VERSION,
            kind: WEAKNESS_KIND.into(),
            model_name: model_name.into(),
            k: TOP_K,
            tie_break: TIE_BREAK.into(),
            set_sizes: SetSizes { t: 0, t_prime: 0 },
            overall: ClassRow::new("all", mean_t, mean_tp),
            per_class,
            per_factor: Vec::new(),
            extensions: Vec::new(),
            missing_metadata: 0,
            notes: Vec::new(),
        };
        report.sort_rows();
        report
    }

    fn sort_rows(&mut self) {
        self.per_class
            .sort_by(|a, b| a.delta.total_cmp(&b.delta).then_with(|| a.class.cmp(&b.class)));
    }

    pub fn class(&self, class: &str) -> Option<&ClassRow> {
        self.per_class.iter().find(|r| r.class == class)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: SCHEMA_VERSION,
                found: self.schema_version,
            });
        }
        for r in self.per_class.iter().chain(std::iter::once(&self.overall)) {
            let in_range = |v: f64| (0.0..=100.0).contains(&v);
            if !in_range(r.acc5_t) || !in_range(r.acc5_t_prime) {
                return Err(Error::invalid("report", format!("class `{}` out of [0, 100]", r.class)));
            }
            if (r.delta - (r.acc5_t_prime - r.acc5_t)).abs() > 0.005 + 1e-9 {
                return Err(Error::invalid("report", format!("class `{}` delta inconsistent", r.class)));
            }
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        util::write_json_pretty(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let report: EvalReport = read_versioned(path)?;
        report.validate()?;
        Ok(report)
    }

    /// One row per class: `class,acc5_T,acc5_Tprime,delta`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "acc5_T", "acc5_Tprime", "delta"])?;
        for r in &self.per_class {
            w.write_record([
                r.class.clone(),
                format!("{:.2}", r.acc5_t),
                format!("{:.2}", r.acc5_t_prime),
                format!("{:.2}", r.delta),
            ])?;
        }
        csv_text(w)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io_at(path, std::fs::write(path, self.to_csv()?))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<ClassRow>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::invalid("report csv", format!("bad field {i} in {rec:?}")))
            };
            out.push(ClassRow {
                class: rec.get(0).unwrap_or_default().to_string(),
                acc5_t: num(1)?,
                acc5_t_prime: num(2)?,
                delta: num(3)?,
            });
        }
        Ok(out)
    }
}

/// Reads a report file after checking its `schema_version` field.
pub fn read_versioned<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let value: serde_json::Value = util::read_json(path)?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::invalid("report", format!("{} has no schema_version", path.display())))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            expected: SCHEMA_VERSION,
            found: found as u32,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::from(e).context(path.display().to_string()))
}

/// Per-class and per-factor accuracy drop of a classifier.
///
/// `cf_factors[i]` is the variation factor behind `t_prime.items[i]`; `None`
/// marks an item without metadata, which is counted and left out of the
/// per-factor section.
pub fn build_weakness_report(
    t: &LoadedSet,
    t_prime: &LoadedSet,
    cf_factors: &[Option<VariationFactor>],
    classifier: &dyn Classifier,
    model_name: &str,
) -> Result<EvalReport> {
    if t.is_empty() || t_prime.is_empty() {
        return Err(Error::invalid("labeled set", "T and T' must be nonempty"));
    }
    if cf_factors.len() != t_prime.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} factor entries for {} counterfactuals",
            cf_factors.len(),
            t_prime.len()
        )));
    }
    let hits_t = top5_hits(t, classifier)?;
    let hits_tp = top5_hits(t_prime, classifier)?;
    Ok(weakness_report_from_hits(
        t,
        &hits_t,
        t_prime,
        &hits_tp,
        cf_factors,
        model_name,
    ))
}

fn weakness_report_from_hits(
    t: &LoadedSet,
    hits_t: &[bool],
    t_prime: &LoadedSet,
    hits_tp: &[bool],
    cf_factors: &[Option<VariationFactor>],
    model_name: &str,
) -> EvalReport {
    let by_class = |set: &LoadedSet, hits: &[bool]| {
        let mut m: BTreeMap<String, Vec<bool>> = BTreeMap::new();
        for ((_, label), hit) in set.items.iter().zip(hits) {
            m.entry(label.clone()).or_default().push(*hit);
        }
        m
    };
    let t_classes = by_class(t, hits_t);
    let tp_classes = by_class(t_prime, hits_tp);
    let mut notes = Vec::new();
    let mut per_class = Vec::new();
    for (class, hits) in &t_classes {
        match tp_classes.get(class) {
            Some(cf) => per_class.push(ClassRow::new(
                class.clone(),
                percent(hits.iter().copied()).unwrap_or(0.0),
                percent(cf.iter().copied()).unwrap_or(0.0),
            )),
            None => notes.push(format!("class `{class}` has no counterfactuals")),
        }
    }
    for class in tp_classes.keys().filter(|c| !t_classes.contains_key(*c)) {
        notes.push(format!("class `{class}` has counterfactuals but no originals"));
    }

    let mut per_factor = Vec::new();
    let missing = cf_factors.iter().filter(|f| f.is_none()).count();
    let factors: BTreeSet<VariationFactor> = cf_factors.iter().flatten().copied().collect();
    for factor in factors {
        let idx: Vec<usize> = (0..t_prime.len()).filter(|i| cf_factors[*i] == Some(factor)).collect();
        let classes: BTreeSet<&str> = idx.iter().map(|i| t_prime.items[*i].1.as_str()).collect();
        let acc_tp = percent(idx.iter().map(|i| hits_tp[*i])).unwrap_or(0.0);
        let acc_t = percent(
            t.items
                .iter()
                .zip(hits_t)
                .filter(|((_, l), _)| classes.contains(l.as_str()))
                .map(|(_, h)| *h),
        );
        if let Some(acc_t) = acc_t {
            per_factor.push(FactorRow {
                factor,
                items: idx.len(),
                acc5_t: round2(acc_t),
                acc5_t_prime: round2(acc_tp),
                delta: delta_from_percentages(acc_t, acc_tp),
            });
        }
    }
    if missing > 0 {
        notes.push(format!("{missing} counterfactuals lack factor metadata"));
    }

    let mut report = EvalReport {
        schema_version: SCHEMA_VERSION,
        kind: WEAKNESS_KIND.into(),
        model_name: model_name.into(),
        k: TOP_K,
        tie_break: TIE_BREAK.into(),
        set_sizes: SetSizes {
            t: t.len(),
            t_prime: t_prime.len(),
        },
        overall: ClassRow::new(
            "all",
            percent(hits_t.iter().copied()).unwrap_or(0.0),
            percent(hits_tp.iter().copied()).unwrap_or(0.0),
        ),
        per_class,
        per_factor,
        extensions: vec!["per_factor".into()],
        missing_metadata: missing,
        notes,
    };
    report.sort_rows();
    report
}

/// One comparison row: accuracy of each model variant on a class of a set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub set: String,
    pub class: String,
    pub baseline: f64,
    pub standard: Option<f64>,
    pub counterfactual: f64,
}

impl ComparisonRow {
    pub fn improvement(&self) -> f64 {
        delta_from_percentages(self.baseline, self.counterfactual)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetFailure {
    pub set: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub kind: String,
    pub model_name: String,
    pub k: usize,
    pub alpha: f64,
    pub rows: Vec<ComparisonRow>,
    pub failures: Vec<SetFailure>,
    pub notes: Vec<String>,
}

impl ComparisonReport {
    pub fn new(model_name: &str, alpha: f64) -> Self {
        ComparisonReport {
            schema_version: SCHEMA_VERSION,
            kind: COMPARISON_KIND.into(),
            model_name: model_name.into(),
            k: TOP_K,
            alpha,
            rows: Vec::new(),
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn row(&self, set: &str, class: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.set == set && r.class == class)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        util::write_json_pretty(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        read_versioned(path)
    }

    /// Columns `set,class,baseline,standard,counterfactual`; a missing
    /// standard arm is an empty field.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["set", "class", "baseline", "standard", "counterfactual"])?;
        for r in &self.rows {
            w.write_record([
                r.set.clone(),
                r.class.clone(),
                format!("{:.2}", r.baseline),
                r.standard.map(|s| format!("{s:.2}")).unwrap_or_default(),
                format!("{:.2}", r.counterfactual),
            ])?;
        }
        csv_text(w)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io_at(path, std::fs::write(path, self.to_csv()?))
    }
}

fn csv_text(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid("csv", e.to_string()))
}

/// Per-class top-5 accuracy of a set, plus an `"all"` entry, in class order.
pub fn per_class_acc5(set: &LoadedSet, classifier: &dyn Classifier) -> Result<Vec<(String, f64)>> {
    let hits = top5_hits(set, classifier)?;
    let mut m: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for ((_, label), hit) in set.items.iter().zip(&hits) {
        m.entry(label.clone()).or_default().push(*hit);
    }
    let mut out: Vec<(String, f64)> = m
        .into_iter()
        .map(|(c, h)| (c, round2(percent(h.into_iter()).unwrap_or(0.0))))
        .collect();
    out.push(("all".into(), round2(percent(hits.into_iter()).unwrap_or(0.0))));
    Ok(out)
}
