use std::path::Path;

use cfr_core::config::Config;
use cfr_core::evaluation::{ComparisonReport, EvalReport};
use cfr_core::pipeline::{run_reinforcement, run_stress_test, RunManifest, MANIFEST_FILE};
use cfr_core::report::{render_report, ReportFormat};
use cfr_core::synthetic::{generate, SyntheticConfig};
use cfr_core::Error;

/// A 40-image dataset: 4 classes x 10.
fn small_dataset(dir: &Path, extra: &[String]) -> Config {
    let cfg = SyntheticConfig {
        per_class: 10,
        ood_per_class: 6,
        ..SyntheticConfig::default()
    };
    let summary = generate(&cfg, dir).unwrap();
    Config::load(&dir.join(summary.run_config), extra).unwrap()
}

#[test]
fn stress_test_writes_every_listed_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_dataset(dir.path(), &[]);
    let out = run_stress_test(&config).unwrap();
    assert_eq!(out.report.set_sizes.t, 40);
    assert!(out.report.set_sizes.t_prime > 0);
    let manifest = RunManifest::load(&out.run_dir).unwrap();
    manifest.verify(&out.run_dir).unwrap();
    assert_eq!(manifest, out.manifest);
    for key in ["report", "counterfactuals", "config"] {
        assert!(manifest.artifact_paths.contains_key(key), "missing {key}: {:?}", manifest.artifact_paths);
    }
    for rel in manifest.artifact_paths.values() {
        assert!(!Path::new(rel).is_absolute(), "{rel}");
    }
    let report = EvalReport::read_json(&out.run_dir.join("reports/weakness.json")).unwrap();
    assert_eq!(report, out.report);
    assert!(report.overall.delta < 0.0, "background swaps should hurt the biased baseline");
}

#[test]
fn run_ids_are_never_reused() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_dataset(dir.path(), &[]);
    let a = run_stress_test(&config).unwrap();
    let b = run_stress_test(&config).unwrap();
    assert_ne!(a.run_id, b.run_id);
    assert!(a.run_dir.join(MANIFEST_FILE).exists());
    assert_eq!(
        std::fs::read(a.run_dir.join("reports/weakness.json")).unwrap(),
        std::fs::read(b.run_dir.join("reports/weakness.json")).unwrap()
    );
}

#[test]
fn reinforcement_reports_every_configured_set() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_dataset(dir.path(), &[]);
    let stress = run_stress_test(&config).unwrap();
    let out = run_reinforcement(&config, &stress.run_id).unwrap();
    for set in ["original", "ood", "hybrid"] {
        let row = out.comparison.row(set, "all").unwrap_or_else(|| panic!("no {set}/all row"));
        assert!(row.standard.is_some());
        assert!((0.0..=100.0).contains(&row.counterfactual));
    }
    assert!(out.comparison.failures.is_empty());
    out.manifest.verify(&out.run_dir).unwrap();
    assert_eq!(out.manifest.source_run.as_deref(), Some(stress.run_id.as_str()));
    assert!(out.training.counterfactual.epochs_run <= config.train.max_epochs);
}

#[test]
fn missing_eval_set_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_dataset(dir.path(), &["reinforce.standard_arm=false".into()]);
    config.reinforce.eval_sets.push(cfr_core::config::EvalSetSpec {
        name: "ghost".into(),
        manifest: dir.path().join("ghost.jsonl"),
    });
    let stress = run_stress_test(&config).unwrap();
    let out = run_reinforcement(&config, &stress.run_id).unwrap();
    assert_eq!(out.comparison.failures.len(), 1);
    assert_eq!(out.comparison.failures[0].set, "ghost");
    assert!(out.comparison.row("ood", "all").unwrap().standard.is_none());
}

#[test]
fn no_eval_sets_gives_an_empty_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_dataset(dir.path(), &[]);
    config.reinforce.eval_sets.clear();
    let stress = run_stress_test(&config).unwrap();
    let out = run_reinforcement(&config, &stress.run_id).unwrap();
    assert!(out.comparison.rows.is_empty());
    assert!(!out.comparison.notes.is_empty());
}

#[test]
fn unknown_stress_run_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_dataset(dir.path(), &[]);
    let e = run_reinforcement(&config, "stress-00000000-001").unwrap_err();
    assert!(matches!(e.root(), Error::RunNotFound(_)), "{e}");
}

#[test]
fn reports_render_in_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_dataset(dir.path(), &[]);
    let stress = run_stress_test(&config).unwrap();
    let out = run_reinforcement(&config, &stress.run_id).unwrap();
    let weakness = stress.run_dir.join("reports/weakness.json");
    let comparison = out.run_dir.join("reports/comparison.json");

    let json = render_report(&comparison, ReportFormat::Json).unwrap();
    let parsed: ComparisonReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed, out.comparison);

    let csv = render_report(&comparison, ReportFormat::Csv).unwrap();
    assert_eq!(csv, std::fs::read_to_string(out.run_dir.join("reports/comparison.csv")).unwrap());
    assert_eq!(csv.lines().count(), out.comparison.rows.len() + 1);

    let csv = render_report(&weakness, ReportFormat::Csv).unwrap();
    assert_eq!(EvalReport::read_csv(&stress.run_dir.join("reports/weakness.csv")).unwrap().len(), csv.lines().count() - 1);

    let table = render_report(&weakness, ReportFormat::Table).unwrap();
    assert!(table.contains("dog sled"), "{table}");
}
