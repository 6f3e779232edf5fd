use std::sync::OnceLock;

use attrbench_core::backend::synthetic::planted_keyword_reference;
use attrbench_core::datasets::{project, WordScores};
use attrbench_core::metrics::faithfulness::{
    auc_tp_instance, perturbed_count, soft_comprehensiveness, soft_sufficiency, SoftParams,
    SweepItem, SweepParams,
};
use attrbench_core::metrics::plausibility::spans;
use attrbench_core::metrics::{
    auprc, complexity, iou_f1, rank_by_magnitude, sparseness, token_f1, trapezoid,
    NormalizedImportance, PlausibilityParams,
};
use attrbench_core::{
    explain, Attribution, CanonicalInstance, Dataset, ExplainerParams, Method, ModelBackend,
    RationaleMask, ReferenceClassifier, Task,
};
use proptest::prelude::*;

fn model() -> &'static ReferenceClassifier {
    static MODEL: OnceLock<ReferenceClassifier> = OnceLock::new();
    MODEL.get_or_init(|| planted_keyword_reference(5.0).unwrap())
}

/// Scores with at least one nonzero entry.
fn scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..max_len)
        .prop_filter("all zero", |v| v.iter().any(|s| *s != 0.0))
}

/// Scores paired with a rationale that has at least one positive word.
fn scored_rationale() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(any::<bool>(), n)
                .prop_filter("no positives", |m| m.iter().any(|b| *b)),
        )
    })
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,6}|good|bad|,|\\.", 1..10).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn complexity_lies_between_zero_and_log_n(s in scores(30)) {
        let v = complexity(&s).unwrap().value;
        prop_assert!(v >= -1e-12 && v <= (s.len() as f64).ln() + 1e-12, "{v}");
    }

    #[test]
    fn sparseness_lies_in_gini_range(s in scores(30)) {
        let n = s.len() as f64;
        let v = sparseness(&s).unwrap().value;
        prop_assert!(v >= 0.0 && v <= (n - 1.0) / n + 1e-12, "{v}");
    }

    #[test]
    fn complexity_ignores_sign_and_scale(s in scores(20), c in 0.01f64..100.0) {
        let flipped: Vec<f64> = s.iter().map(|x| -c * x).collect();
        let a = complexity(&s).unwrap().value;
        let b = complexity(&flipped).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn retention_probabilities_are_probabilities(s in prop::collection::vec(-10.0f64..10.0, 1..30)) {
        let q = NormalizedImportance::from_scores(&s);
        prop_assert_eq!(q.len(), s.len());
        prop_assert!(q.q.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn ranking_is_a_permutation_by_magnitude(s in prop::collection::vec(-10.0f64..10.0, 0..30)) {
        let order = rank_by_magnitude(&s);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..s.len()).collect::<Vec<_>>());
        for w in order.windows(2) {
            prop_assert!(s[w[0]].abs() >= s[w[1]].abs());
        }
    }

    #[test]
    fn perturbed_count_is_monotone_and_bounded(n in 0usize..200, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(perturbed_count(lo, n) <= perturbed_count(hi, n));
        prop_assert!(perturbed_count(hi, n) <= n);
        prop_assert_eq!(perturbed_count(1.0, n), n);
        prop_assert_eq!(perturbed_count(0.0, n), 0);
    }

    #[test]
    fn trapezoid_of_a_constant_is_the_constant(c in -5.0f64..5.0, k in 2usize..20) {
        let xs: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
        prop_assert!((trapezoid(&xs, &vec![c; k]) - c).abs() < 1e-12);
    }

    #[test]
    fn spans_rebuild_the_mask(mask in prop::collection::vec(any::<bool>(), 0..40)) {
        let mut rebuilt = vec![false; mask.len()];
        let found = spans(&mask);
        for w in found.windows(2) {
            // maximal runs never touch
            prop_assert!(w[0].1 < w[1].0);
        }
        for (a, b) in found {
            prop_assert!(a < b);
            rebuilt[a..b].iter_mut().for_each(|x| *x = true);
        }
        prop_assert_eq!(rebuilt, mask);
    }

    #[test]
    fn plausibility_scores_are_in_unit_interval(
        (s, r) in scored_rationale(),
        k in prop::option::of(0usize..12),
    ) {
        let words = WordScores::from_scores(s);
        let rationale = RationaleMask(r);
        let params = PlausibilityParams { fixed_k: k };
        for v in [
            iou_f1(&words, &rationale, &params).unwrap().value,
            token_f1(&words, &rationale, &params).unwrap().value,
            auprc(&words, &rationale).unwrap().value,
        ] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn perfect_ranking_is_perfectly_plausible((_, r) in scored_rationale()) {
        let s: Vec<f64> = r.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
        let words = WordScores::from_scores(s);
        let rationale = RationaleMask(r);
        let params = PlausibilityParams::default();
        prop_assert_eq!(token_f1(&words, &rationale, &params).unwrap().value, 1.0);
        prop_assert_eq!(iou_f1(&words, &rationale, &params).unwrap().value, 1.0);
        prop_assert_eq!(auprc(&words, &rationale).unwrap().value, 1.0);
    }

    #[test]
    fn projection_keeps_the_total(text in sentence(), seed in any::<u64>()) {
        let inst = CanonicalInstance::single("x", text, 0, None);
        let seq = model().tokenize(&inst.text()).unwrap();
        let words = inst.words();
        let scores: Vec<f64> = (0..seq.len()).map(|i| ((seed >> (i % 64)) & 7) as f64 - 3.5).collect();
        let attr = Attribution::new("x", Method::Lime, 0, scores.clone(), seq.tokens.clone());
        let ws = project(&attr, &seq, &words).unwrap();
        prop_assert_eq!(ws.len(), words.len());
        let a: f64 = scores.iter().sum();
        let b: f64 = ws.scores.iter().sum();
        prop_assert!((a - b).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn explanations_cover_every_token(text in sentence(), target in 0usize..2) {
        let m = model();
        let seq = m.tokenize(&text).unwrap();
        for method in [Method::Saliency, Method::IntegratedGradients, Method::Deeplift, Method::Lime] {
            let a = explain(m, &seq, target, method, &ExplainerParams::default()).unwrap();
            prop_assert_eq!(a.scores.len(), seq.len());
            prop_assert_eq!(&a.token_texts, &seq.tokens);
            prop_assert!(a.scores.iter().all(|s| s.is_finite()));
        }
    }

    #[test]
    fn perturbation_metrics_stay_in_range(text in sentence(), s in scores(2), seed in any::<u64>()) {
        let m = model();
        let seq = m.tokenize(&text).unwrap();
        let n = seq.len();
        let raw: Vec<f64> = (0..n).map(|i| s[i % s.len()] * (i as f64 + 1.0)).collect();
        let attr = Attribution::new("x", Method::Lime, 0, raw, seq.tokens.clone());
        let soft = SoftParams { samples: 10, seed };
        for v in [
            soft_sufficiency(m, &seq, &attr, &soft).unwrap().value,
            soft_comprehensiveness(m, &seq, &attr, &soft).unwrap().value,
        ] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
        let item = SweepItem { seq: &seq, attribution: &attr, gold: None };
        let auc = auc_tp_instance(m, &item, &SweepParams::default()).unwrap().value;
        prop_assert!((0.0..=1.0 + 1e-12).contains(&auc), "{auc}");
    }

    #[test]
    fn canonical_jsonl_round_trips(
        texts in prop::collection::vec(sentence(), 1..6),
        labels in prop::collection::vec(0usize..3, 6),
    ) {
        let instances = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let n = t.split_whitespace().count();
                let rationale = (i % 2 == 0).then(|| (0..n).map(|w| w == 0).collect());
                CanonicalInstance::single(format!("r{i}"), t.clone(), labels[i], rationale)
            })
            .collect();
        let ds = Dataset {
            name: "fuzz".into(),
            task: Task::Nli,
            label_names: vec!["entailment".into(), "neutral".into(), "contradiction".into()],
            instances,
        };
        let back = Dataset::parse_jsonl(&ds.to_jsonl().unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }
}
