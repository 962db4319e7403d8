//! Run configuration: a TOML document with one table per concern, dotted
//! `key=value` overrides, and a content hash recorded in run manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::backends::BackendsConfig;
use crate::editing::{default_tau_grid, validate_grid, EditorConfig, NullTextOptions};
use crate::error::{io_at, Error, Result};
use crate::perturbation::{FilterPolicy, VariationFactor};
use crate::reinforcement::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSON-lines `{image, label}` manifest of the original test set.
    pub manifest: PathBuf,
    /// JSON list of class names; defaults to the classifier's own.
    pub classes: Option<PathBuf>,
    /// JSON `{class: [synonym, ...]}` map merged into the filter policy.
    pub synonyms: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: PathBuf::from("data/T.jsonl"),
            classes: None,
            synonyms: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressConfig {
    pub factors: Vec<VariationFactor>,
    pub n_edits_per_factor: usize,
    pub caption_min_words: usize,
    pub repetition_penalty: f64,
}

impl Default for StressConfig {
    fn default() -> Self {
        StressConfig {
            factors: VariationFactor::ALL.to_vec(),
            n_edits_per_factor: 3,
            caption_min_words: 20,
            repetition_penalty: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditingConfig {
    pub ddim_steps: usize,
    pub guidance_scale: f64,
    pub null_text: NullTextOptions,
    /// Toy generator: caption-pattern displacement over a full pass.
    pub edit_gain: f64,
    /// Toy generator: relative error of the inversion step.
    pub inversion_mismatch: f64,
}

impl Default for EditingConfig {
    fn default() -> Self {
        EditingConfig {
            ddim_steps: 50,
            guidance_scale: 7.5,
            null_text: NullTextOptions::default(),
            edit_gain: 2.0,
            inversion_mismatch: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSetSpec {
    pub name: String,
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReinforceConfig {
    pub val_fraction: f64,
    pub standard_arm: bool,
    pub eval_sets: Vec<EvalSetSpec>,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        ReinforceConfig {
            val_fraction: 0.2,
            standard_arm: true,
            eval_sets: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub run_root: PathBuf,
    /// Worker threads for per-item stages; 0 uses every core.
    pub jobs: usize,
    pub data: DataConfig,
    pub stress: StressConfig,
    pub filter_policy: FilterPolicy,
    pub tau_grid: Vec<f64>,
    pub editing: EditingConfig,
    pub train: TrainConfig,
    pub reinforce: ReinforceConfig,
    pub augment: AugmentConfig,
    pub backends: BackendsConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            run_root: PathBuf::from("runs"),
            jobs: 0,
            data: DataConfig::default(),
            stress: StressConfig::default(),
            filter_policy: FilterPolicy::default(),
            tau_grid: default_tau_grid(),
            editing: EditingConfig::default(),
            train: TrainConfig::default(),
            reinforce: ReinforceConfig::default(),
            augment: AugmentConfig::default(),
            backends: BackendsConfig::default(),
        }
    }
}

/// Sets `path` (dot-separated) inside a TOML table, creating tables on the way.
/// The value is read as a TOML literal, falling back to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{assignment}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl Config {
    /// Parses TOML text, applies overrides, and resolves relative paths
    /// against `base_dir`.
    pub fn from_toml_str(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut config: Config = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = io_at(path, std::fs::read_to_string(path)).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, overrides, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run_root);
        fix(&mut self.data.manifest);
        if let Some(p) = self.data.classes.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.synonyms.as_mut() {
            fix(p);
        }
        for s in &mut self.reinforce.eval_sets {
            fix(&mut s.manifest);
        }
        self.backends.resolve_paths(base);
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        if self.stress.factors.is_empty() {
            return Err(Error::Config("stress.factors must name at least one factor".into()));
        }
        if self.stress.n_edits_per_factor == 0 {
            return Err(Error::Config("stress.n_edits_per_factor must be at least 1".into()));
        }
        if self.stress.caption_min_words == 0 {
            return Err(Error::Config("stress.caption_min_words must be at least 1".into()));
        }
        if !(self.stress.repetition_penalty >= 1.0) {
            return Err(Error::Config("stress.repetition_penalty must be at least 1".into()));
        }
        if self.editing.ddim_steps == 0 {
            return Err(Error::Config("editing.ddim_steps must be at least 1".into()));
        }
        validate_grid(&self.tau_grid).map_err(cfg)?;
        self.filter_policy.validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        if !(0.0 < self.reinforce.val_fraction && self.reinforce.val_fraction < 1.0) {
            return Err(Error::Config("reinforce.val_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn editor_config(&self) -> EditorConfig {
        EditorConfig {
            ddim_steps: self.editing.ddim_steps,
            guidance_scale: self.editing.guidance_scale,
            tau_grid: self.tau_grid.clone(),
            null_text: self.editing.null_text.clone(),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}

/// Every dotted key the configuration accepts, for help output.
pub fn config_keys() -> Vec<String> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(m) if !m.is_empty() => {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }
    let mut out = Vec::new();
    walk("", &serde_json::to_value(Config::default()).expect("config serialises"), &mut out);
    out
}
