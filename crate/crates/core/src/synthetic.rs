//! Planted-background-bias dataset for desk-scale experiments.
//!
//! Every class has a home scene. The pretraining data and the original test
//! set always show a class on its home scene, so a head fitted on them can
//! lean on the background. The OOD set draws the scene uniformly at random.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backends::{subject_color, Lexicon, Region, SceneLayout, SCENE_GROUPS};
use crate::backends::toy::ToyClassifier;
use crate::backends::{Classifier, ImageTensor};
use crate::error::{Error, Result};
use crate::evaluation::{LabeledItem, LabeledSet, LoadedSet};
use crate::imageio;
use crate::util;

pub const DEFAULT_TARGETS: [&str; 4] = ["dog sled", "ski", "howler monkey", "seat belt"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub targets: Vec<String>,
    pub per_class: usize,
    pub ood_per_class: usize,
    pub pretrain_per_class: usize,
    pub size: usize,
    pub fg_noise: f64,
    pub ood_fg_noise: f64,
    pub bg_noise: f64,
    pub pixel_noise: f64,
    pub pretrain_lr: f64,
    pub pretrain_l2: f64,
    pub pretrain_iters: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 7,
            targets: DEFAULT_TARGETS.iter().map(|s| s.to_string()).collect(),
            per_class: 50,
            ood_per_class: 30,
            pretrain_per_class: 60,
            size: 16,
            fg_noise: 0.13,
            ood_fg_noise: 0.15,
            bg_noise: 0.03,
            pixel_noise: 0.01,
            pretrain_lr: 0.5,
            pretrain_l2: 1e-3,
            pretrain_iters: 300,
        }
    }
}

/// What [`generate`] wrote, with paths relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub config: SyntheticConfig,
    pub classes: PathBuf,
    pub original: PathBuf,
    pub ood: PathBuf,
    pub hybrid: PathBuf,
    pub baseline_params: PathBuf,
    pub run_config: PathBuf,
    pub sizes: Vec<(String, usize)>,
    pub baseline_acc5: Vec<(String, f64)>,
}

fn home_scene(class: &str) -> Result<usize> {
    SCENE_GROUPS
        .iter()
        .position(|(_, subjects)| subjects.contains(&class))
        .ok_or_else(|| Error::UnknownClass(class.to_string()))
}

fn class_color(class: &str) -> Result<[f64; 3]> {
    Lexicon::subjects()
        .iter()
        .position(|s| *s == class)
        .map(subject_color)
        .ok_or_else(|| Error::UnknownClass(class.to_string()))
}

fn noisy(color: [f64; 3], sigma: f64, rng: &mut impl Rng) -> [f64; 3] {
    if sigma <= 0.0 {
        return color;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    color.map(|c| (c + n.sample(rng)).clamp(0.0, 1.0))
}

/// Paints a subject colour over the foreground box and a scene colour
/// elsewhere, with independent per-pixel noise.
pub fn render(
    id: &str,
    size: usize,
    fg: [f64; 3],
    bg: [f64; 3],
    pixel_noise: f64,
    rng: &mut impl Rng,
) -> Result<ImageTensor> {
    let n = (pixel_noise > 0.0).then(|| Normal::new(0.0, pixel_noise).expect("positive sigma"));
    let mut data = vec![0.0; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let color = match SceneLayout::region_at(size, size, y, x) {
                Region::Foreground => fg,
                Region::Background => bg,
            };
            for c in 0..3 {
                let e = n.map(|n| n.sample(rng)).unwrap_or(0.0);
                data[(c * size + y) * size + x] = color[c] + e;
            }
        }
    }
    ImageTensor::from_clamped(id, 3, size, size, data)
}

fn scene_color(g: usize) -> [f64; 3] {
    Lexicon::scene_color(SCENE_GROUPS[g].0).expect("scene group colour")
}

/// One image of `class` on scene group `scene`.
fn sample(
    id: String,
    class: &str,
    scene: usize,
    fg_noise: f64,
    config: &SyntheticConfig,
    rng: &mut impl Rng,
) -> Result<ImageTensor> {
    let fg = noisy(class_color(class)?, fg_noise, rng);
    let bg = noisy(scene_color(scene), config.bg_noise, rng);
    render(&id, config.size, fg, bg, config.pixel_noise, rng)
}

fn slug(class: &str) -> String {
    class.replace(' ', "_")
}

fn write_set(out: &Path, name: &str, items: &[(ImageTensor, String)], classes: &[String]) -> Result<PathBuf> {
    let dir = out.join("images").join(name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::File { path: dir.clone(), source: e })?;
    let mut records = Vec::with_capacity(items.len());
    for (img, label) in items {
        let rel = format!("images/{name}/{}.png", img.id());
        imageio::save_png(&out.join(&rel), img)?;
        records.push(LabeledItem { image: rel, label: label.clone() });
    }
    let manifest = PathBuf::from(format!("{name}.jsonl"));
    LabeledSet::new(name, records, classes.to_vec(), out)?.write_manifest(&out.join(&manifest))?;
    Ok(manifest)
}

/// Images of the original, OOD and hybrid sets, in memory.
pub struct SyntheticSets {
    pub original: LoadedSet,
    pub ood: LoadedSet,
    pub hybrid: LoadedSet,
}

/// Draws all three evaluation sets.
pub fn sample_sets(config: &SyntheticConfig) -> Result<SyntheticSets> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut original = Vec::new();
    for class in &config.targets {
        let g = home_scene(class)?;
        for i in 0..config.per_class {
            let id = format!("{}_{i:03}", slug(class));
            original.push((sample(id, class, g, config.fg_noise, config, &mut rng)?, class.clone()));
        }
    }
    let mut ood = Vec::new();
    for class in &config.targets {
        for i in 0..config.ood_per_class {
            let g = rng.random_range(0..SCENE_GROUPS.len());
            let id = format!("ood_{}_{i:03}", slug(class));
            ood.push((sample(id, class, g, config.ood_fg_noise, config, &mut rng)?, class.clone()));
        }
    }
    // Hybrid: half of each source, drawn without replacement and shuffled.
    let mut a = original.clone();
    let mut b = ood.clone();
    a.shuffle(&mut rng);
    b.shuffle(&mut rng);
    let half = ood.len().min(original.len()) / 2;
    let mut hybrid: Vec<_> = a.into_iter().take(half).chain(b.into_iter().take(half)).collect();
    hybrid.shuffle(&mut rng);
    Ok(SyntheticSets {
        original: LoadedSet::new("original", original)?,
        ood: LoadedSet::new("ood", ood)?,
        hybrid: LoadedSet::new("hybrid", hybrid)?,
    })
}

/// The baseline classifier: the standard toy classifier with its head fitted
/// on home-scene images of every class.
pub fn pretrain_baseline(config: &SyntheticConfig) -> Result<ToyClassifier> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut clf = ToyClassifier::standard();
    let classes = clf.class_names()?.to_vec();
    let mut images = Vec::with_capacity(classes.len() * config.pretrain_per_class);
    for (y, class) in classes.iter().enumerate() {
        let g = home_scene(class)?;
        for i in 0..config.pretrain_per_class {
            let id = format!("pre_{}_{i:03}", slug(class));
            images.push((sample(id, class, g, config.fg_noise, config, &mut rng)?, y));
        }
    }
    let batch: Vec<(&ImageTensor, usize)> = images.iter().map(|(img, y)| (img, *y)).collect();
    let loss = clf.fit_head(&batch, config.pretrain_lr, config.pretrain_l2, config.pretrain_iters)?;
    log::info!("baseline head fitted, final loss {loss:.4}");
    Ok(clf)
}

fn run_config_text(seed: u64) -> String {
    format!(
        r#"seed = {seed}
run_root = "runs"

[data]
manifest = "original.jsonl"
classes = "classes.json"

[stress]
factors = ["background"]

[backends.classifier]
kind = "toy"
params = "baseline"

[[reinforce.eval_sets]]
name = "original"
manifest = "original.jsonl"

[[reinforce.eval_sets]]
name = "ood"
manifest = "ood.jsonl"

[[reinforce.eval_sets]]
name = "hybrid"
manifest = "hybrid.jsonl"
"#
    )
}

/// Writes the dataset, the baseline parameters and a ready-to-use run
/// configuration under `out`.
pub fn generate(config: &SyntheticConfig, out: &Path) -> Result<SyntheticSummary> {
    if config.targets.is_empty() || config.per_class == 0 || config.ood_per_class == 0 || config.size < 4 {
        return Err(Error::invalid(
            "synthetic config",
            "need targets, nonzero set sizes and an image side of at least 4",
        ));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::File { path: out.to_path_buf(), source: e })?;
    let clf = pretrain_baseline(config)?;
    let classes = clf.class_names()?.to_vec();
    let sets = sample_sets(config)?;

    let classes_path = PathBuf::from("classes.json");
    util::write_json_pretty(&out.join(&classes_path), &classes)?;
    let baseline_params = PathBuf::from("baseline");
    clf.save(&out.join(&baseline_params))?;
    let original = write_set(out, "original", &sets.original.items, &classes)?;
    let ood = write_set(out, "ood", &sets.ood.items, &classes)?;
    let hybrid = write_set(out, "hybrid", &sets.hybrid.items, &classes)?;
    let run_config = PathBuf::from("cfr.toml");
    let path = out.join(&run_config);
    std::fs::write(&path, run_config_text(config.seed)).map_err(|e| Error::File { path, source: e })?;

    let mut baseline_acc5 = Vec::new();
    for set in [&sets.original, &sets.ood, &sets.hybrid] {
        baseline_acc5.push((set.name.clone(), crate::evaluation::mean_acc5(set, &clf)?));
    }
    let summary = SyntheticSummary {
        config: config.clone(),
        classes: classes_path,
        original,
        ood,
        hybrid,
        baseline_params,
        run_config,
        sizes: [&sets.original, &sets.ood, &sets.hybrid]
            .iter()
            .map(|s| (s.name.clone(), s.len()))
            .collect(),
        baseline_acc5,
    };
    util::write_json_pretty(&out.join("dataset.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::mean_acc5;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            per_class: 5,
            ood_per_class: 4,
            pretrain_per_class: 10,
            pretrain_iters: 50,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn sets_have_requested_sizes_and_labels() {
        let s = sample_sets(&small()).unwrap();
        assert_eq!(s.original.len(), 20);
        assert_eq!(s.ood.len(), 16);
        assert_eq!(s.hybrid.len(), 16);
        assert!(s.original.items.iter().all(|(_, l)| DEFAULT_TARGETS.contains(&l.as_str())));
    }

    #[test]
    fn original_images_sit_on_their_home_scene() {
        let s = sample_sets(&small()).unwrap();
        let (img, label) = &s.original.items[0];
        assert_eq!(label, "dog sled");
        let bg = SceneLayout::region_mean(img, Region::Background);
        let snow = Lexicon::scene_color("snow").unwrap();
        assert!(crate::backends::color_distance(bg, snow) < 0.15);
    }

    #[test]
    fn sampling_is_seeded() {
        assert_eq!(sample_sets(&small()).unwrap().ood, sample_sets(&small()).unwrap().ood);
        let other = SyntheticConfig { seed: 8, ..small() };
        assert_ne!(sample_sets(&small()).unwrap().ood, sample_sets(&other).unwrap().ood);
    }

    #[test]
    fn background_bias_is_planted() {
        let cfg = SyntheticConfig::default();
        let clf = pretrain_baseline(&cfg).unwrap();
        let s = sample_sets(&cfg).unwrap();
        let orig = mean_acc5(&s.original, &clf).unwrap();
        let ood = mean_acc5(&s.ood, &clf).unwrap();
        assert!(orig > ood + 10.0, "original {orig} vs ood {ood}");
    }

    #[test]
    fn generate_writes_loadable_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let summary = generate(&small(), dir.path()).unwrap();
        let classes: Vec<String> = util::read_json(&dir.path().join(&summary.classes)).unwrap();
        let set = LabeledSet::from_manifest(&dir.path().join(&summary.ood), "ood", &classes).unwrap();
        assert_eq!(set.load().unwrap().len(), 16);
        ToyClassifier::load(&dir.path().join(&summary.baseline_params)).unwrap();
        assert!(dir.path().join("cfr.toml").exists());
    }
}
