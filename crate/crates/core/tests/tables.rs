//! Reference OOD accuracies for three architectures, replayed through the
//! report types.

use cfr_core::evaluation::{ComparisonReport, ComparisonRow};
use cfr_core::report::comparison_table;

/// (model, class, baseline, standard, counterfactual) on the OOD set.
const OOD: [(&str, &str, f64, f64, f64); 12] = [
    ("ResNet50", "Dog sled", 84.29, 78.57, 84.29),
    ("ResNet50", "Howler monkey", 78.25, 80.00, 88.75),
    ("ResNet50", "Seat belt", 69.95, 70.52, 72.20),
    ("ResNet50", "Ski", 81.54, 83.08, 83.08),
    ("DenseNet121", "Dog sled", 85.14, 86.20, 89.71),
    ("DenseNet121", "Howler monkey", 84.73, 85.21, 88.25),
    ("DenseNet121", "Seat belt", 71.92, 75.71, 72.48),
    ("DenseNet121", "Ski", 75.08, 75.38, 76.92),
    ("VGG16", "Dog sled", 74.29, 78.57, 75.71),
    ("VGG16", "Howler monkey", 60.00, 56.25, 63.75),
    ("VGG16", "Seat belt", 48.57, 47.14, 52.86),
    ("VGG16", "Ski", 63.08, 63.08, 64.62),
];

fn report(model: &str) -> ComparisonReport {
    let mut r = ComparisonReport::new(model, 0.3);
    r.rows = OOD
        .iter()
        .filter(|row| row.0 == model)
        .map(|&(_, class, baseline, standard, counterfactual)| ComparisonRow {
            set: "ood".into(),
            class: class.into(),
            baseline,
            standard: Some(standard),
            counterfactual,
        })
        .collect();
    r
}

#[test]
fn counterfactual_beats_standard_in_nine_of_twelve() {
    let mut strict = 0;
    let mut chain = 0;
    for model in ["ResNet50", "DenseNet121", "VGG16"] {
        for row in report(model).rows {
            let std = row.standard.unwrap();
            strict += usize::from(row.counterfactual > std);
            chain += usize::from(row.counterfactual >= std && std >= row.baseline);
        }
    }
    assert_eq!(strict, 9);
    // The stronger ordering cf >= standard >= baseline holds less often.
    assert_eq!(chain, 7);
}

#[test]
fn counterfactual_never_below_baseline() {
    let worst = OOD.iter().map(|r| r.4 - r.2).fold(f64::INFINITY, f64::min);
    assert!(worst >= 0.0, "{worst}");
}

#[test]
fn hard_set_improvement_renders() {
    let mut r = ComparisonReport::new("ResNet50", 0.3);
    r.rows.push(ComparisonRow {
        set: "hard".into(),
        class: "Ski".into(),
        baseline: 78.22,
        standard: None,
        counterfactual: 83.25,
    });
    assert!((r.rows[0].improvement() - 5.03).abs() < 1e-9);
    assert!(comparison_table(&r).contains("+5.03"));
}
