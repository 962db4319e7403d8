use std::collections::BTreeSet;

use proptest::prelude::*;

use cfr_core::backends::toy::ToyClassifier;
use cfr_core::backends::ScoreVector;
use cfr_core::editing::{argmin_tau, directional_from_deltas, format_tau};
use cfr_core::evaluation::{acc_at_k, delta_from_percentages, EvalReport, LoadedSet};
use cfr_core::perturbation::{CaptionEdit, ChangedSpan, VariationFactor};
use cfr_core::reinforcement::{blend_parameters, fine_tune_head, ParameterSet, TrainConfig};
use cfr_core::synthetic::{sample_sets, SyntheticConfig};

fn params(values: &[f64], head: &[f64]) -> ParameterSet {
    let mut p = ParameterSet::new();
    p.insert("body", vec![values.len()], values.to_vec(), false)
        .and_then(|p| p.insert("head", vec![head.len()], head.to_vec(), true))
        .unwrap();
    p
}

fn pair() -> impl Strategy<Value = (ParameterSet, ParameterSet)> {
    (1usize..6, 1usize..6).prop_flat_map(|(nb, nh)| {
        (
            prop::collection::vec(-10.0f64..10.0, nb),
            prop::collection::vec(-10.0f64..10.0, nh),
            prop::collection::vec(-10.0f64..10.0, nb),
            prop::collection::vec(-10.0f64..10.0, nh),
        )
            .prop_map(|(b0, h0, b1, h1)| (params(&b0, &h0), params(&b1, &h1)))
    })
}

fn head_scope() -> BTreeSet<String> {
    ["head".to_string()].into()
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

proptest! {
    #[test]
    fn blend_is_affine_in_alpha((p0, p1) in pair(), alpha in 0.0f64..=1.0) {
        let b = blend_parameters(&p0, &p1, alpha, &head_scope()).unwrap();
        let (h0, h1, hb) = (p0.values("head").unwrap(), p1.values("head").unwrap(), b.values("head").unwrap());
        for i in 0..h0.len() {
            prop_assert!((hb[i] - ((1.0 - alpha) * h0[i] + alpha * h1[i])).abs() < 1e-12);
        }
        prop_assert_eq!(b.values("body").unwrap(), p0.values("body").unwrap());
    }

    #[test]
    fn nested_blends_compose((p0, p1) in pair(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let inner = blend_parameters(&p0, &p1, b, &head_scope()).unwrap();
        let outer = blend_parameters(&p0, &inner, a, &head_scope()).unwrap();
        let direct = blend_parameters(&p0, &p1, a * b, &head_scope()).unwrap();
        for (x, y) in outer.values("head").unwrap().iter().zip(direct.values("head").unwrap()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn directional_similarity_is_bounded_and_scale_free(
        u in prop::collection::vec(-5.0f64..5.0, 1..16),
        scale in 0.01f64..100.0,
    ) {
        let v: Vec<f64> = u.iter().rev().copied().collect();
        prop_assume!(u.iter().any(|x| *x != 0.0));
        let o = directional_from_deltas(&u, &v).unwrap();
        prop_assert!((0.0..=2.0).contains(&o));
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        prop_assert!((directional_from_deltas(&u, &scaled).unwrap() - o).abs() < 1e-9);
        prop_assert!(directional_from_deltas(&u, &u).unwrap() < 1e-12);
    }

    #[test]
    fn argmin_tau_returns_a_minimiser(scores in prop::collection::vec(0u8..5, 9)) {
        let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let score = |t: f64| scores[(t * 10.0).round() as usize - 1] as f64;
        let (tau, o, _) = argmin_tau(&grid, |t| Ok((score(t), ()))).unwrap();
        let best = *scores.iter().min().unwrap() as f64;
        prop_assert_eq!(o, best);
        // Largest tau among the minimisers.
        let last = grid.iter().rev().find(|t| score(**t) == best).unwrap();
        prop_assert_eq!(tau, *last);
        prop_assert_eq!(format_tau(tau).len(), 4);
    }

    #[test]
    fn changed_span_rebuilds_the_perturbed_caption(
        original in prop::collection::vec("[a-z]{1,5}", 0..8),
        perturbed in prop::collection::vec("[a-z]{1,5}", 0..8),
    ) {
        match ChangedSpan::between(&original, &perturbed) {
            None => prop_assert_eq!(&original, &perturbed),
            Some(span) => {
                let mut rebuilt = original[..span.start].to_vec();
                rebuilt.extend(span.replacement.iter().cloned());
                rebuilt.extend(original[span.end..].iter().cloned());
                prop_assert_eq!(rebuilt, perturbed);
            }
        }
    }

    #[test]
    fn caption_edit_span_matches_tokens(a in "[a-z]{1,4}( [a-z]{1,4}){0,5}", b in "[a-z]{1,4}( [a-z]{1,4}){0,5}") {
        let e = CaptionEdit::new(&a, &b, VariationFactor::Object);
        prop_assert_eq!(e.changed_span, ChangedSpan::between(&tokens(&a), &tokens(&b)));
    }

    #[test]
    fn top_scoring_class_is_a_top_k_hit(scores in prop::collection::vec(-3.0f64..3.0, 5..12), k in 1usize..5) {
        let names: Vec<String> = (0..scores.len()).map(|i| format!("c{i}")).collect();
        let best = scores
            .iter()
            .enumerate()
            .fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
        let sv = ScoreVector::new(scores.clone(), names.clone()).unwrap();
        prop_assert!(acc_at_k(&sv, &names[best], k).unwrap());
        let hits = names.iter().filter(|n| acc_at_k(&sv, n, k).unwrap()).count();
        prop_assert_eq!(hits, k);
    }

    #[test]
    fn report_deltas_are_differences(t in 0.0f64..100.0, tp in 0.0f64..100.0) {
        let d = delta_from_percentages(t, tp);
        prop_assert!((d - (tp - t)).abs() <= 0.01 + 1e-9);
        let r = EvalReport::from_accuracies("m", &[("a", t, tp)]);
        prop_assert!(r.validate().is_ok());
    }
}

fn tiny_sets() -> (LoadedSet, LoadedSet) {
    let cfg = SyntheticConfig {
        per_class: 3,
        ood_per_class: 3,
        ..SyntheticConfig::default()
    };
    let sets = sample_sets(&cfg).unwrap();
    (sets.ood, sets.original)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn training_never_exceeds_max_epochs(
        max_epochs in 1usize..6,
        patience in 1usize..4,
        min_delta in 0.0f64..0.2,
        lr in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let (train, val) = tiny_sets();
        let config = TrainConfig { max_epochs, patience, min_delta, learning_rate: lr, seed, ..TrainConfig::default() };
        let mut clf = ToyClassifier::standard();
        let (_, record) = fine_tune_head(&mut clf, &train, &val, &config).unwrap();
        prop_assert!(record.epochs_run >= 1 && record.epochs_run <= max_epochs);
        prop_assert_eq!(record.epoch_metrics.len(), record.epochs_run);
        if min_delta == 0.0 {
            prop_assert_eq!(record.epochs_run, max_epochs);
        }
        if record.stopped_early {
            prop_assert!(record.epochs_run < max_epochs);
        }
    }

    #[test]
    fn disabled_early_stopping_runs_every_epoch(max_epochs in 1usize..6, seed in any::<u64>()) {
        let (train, val) = tiny_sets();
        let config = TrainConfig { max_epochs, min_delta: 0.0, patience: 1, seed, ..TrainConfig::default() };
        let mut clf = ToyClassifier::standard();
        let (_, record) = fine_tune_head(&mut clf, &train, &val, &config).unwrap();
        prop_assert_eq!(record.epochs_run, max_epochs);
        prop_assert!(!record.stopped_early);
    }
}
