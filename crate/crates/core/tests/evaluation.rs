mod common;

use std::collections::BTreeSet;

use common::{confusion_scan, REFERENCE_ROWS};
use proptest::prelude::*;
use tor_core::agents::FinalDecision;
use tor_core::case_model::{option_letter, DiagnosisOptions, OptionItem};
use tor_core::evaluation::{aggregate, f1, score_case, CaseScore};
use tor_core::evidence_tree::{DiagnosisEntry, EvidenceTree};

fn options(n: usize, gold: &BTreeSet<usize>) -> DiagnosisOptions {
    DiagnosisOptions {
        items: (0..n)
            .map(|i| OptionItem { letter: option_letter(i), label: format!("label {i}"), is_gold: gold.contains(&i) })
            .collect(),
    }
}

fn decision(letters: Vec<String>) -> FinalDecision {
    FinalDecision {
        selected_letters: letters,
        merged_tree: EvidenceTree::new("T", vec![DiagnosisEntry::new("D", "a", ["e"])]),
        raw: String::new(),
        dropped_letters: Vec::new(),
    }
}

fn selection_strategy() -> impl Strategy<Value = (usize, BTreeSet<usize>, BTreeSet<usize>)> {
    (2usize..40).prop_flat_map(|n| {
        (Just(n), prop::collection::btree_set(0..n, 1..=n), prop::collection::btree_set(0..n, 0..=n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn score_case_matches_confusion_scan((n, gold, selected) in selection_strategy()) {
        let opts = options(n, &gold);
        let letters: Vec<String> = (0..n).map(option_letter).collect();
        let chosen: Vec<String> = selected.iter().map(|&i| option_letter(i)).collect();
        let s = score_case(&decision(chosen.clone()), &opts);
        let gold_letters: BTreeSet<String> = gold.iter().map(|&i| option_letter(i)).collect();
        let (tp, fp, fn_) = confusion_scan(&letters, &gold_letters, &chosen.into_iter().collect());
        prop_assert_eq!(s, CaseScore { tp, fp, fn_ });
    }

    #[test]
    fn f1_lies_between_precision_and_recall(p in 0.0f64..=100.0, r in 0.0f64..=100.0) {
        let v = f1(p, r);
        prop_assert!((0.0..=100.0).contains(&v));
        if p > 0.0 && r > 0.0 {
            prop_assert!(v >= p.min(r) - 1e-9 && v <= p.max(r) + 1e-9);
        } else {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn micro_metrics_come_from_summed_counters(scores in prop::collection::vec((0u32..10, 0u32..10, 0u32..10), 1..20)) {
        let rows: Vec<(String, CaseScore)> = scores
            .iter()
            .enumerate()
            .map(|(i, &(tp, fp, fn_))| (format!("c{i}"), CaseScore { tp, fp, fn_ }))
            .collect();
        let report = aggregate(&rows).unwrap();
        let (tp, fp, fn_) = scores.iter().fold((0, 0, 0), |a, s| (a.0 + s.0, a.1 + s.1, a.2 + s.2));
        let p = if tp + fp == 0 { 0.0 } else { 100.0 * tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { 100.0 * tp as f64 / (tp + fn_) as f64 };
        prop_assert!((report.micro.precision - p).abs() < 1e-9);
        prop_assert!((report.micro.recall - r).abs() < 1e-9);
        let expected_f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        prop_assert!((report.micro.f1 - expected_f1).abs() < 1e-9);
    }
}

#[test]
fn reference_rows_reproduce_within_a_hundredth() {
    for (p, r, published) in REFERENCE_ROWS {
        let v = f1(p, r);
        assert!((v - published).abs() <= 0.01, "f1({p}, {r}) = {v}, expected {published}");
    }
}

#[test]
fn micro_aggregate_of_a_perfect_and_a_wrong_case_is_fifty() {
    let report = aggregate(&[
        ("a".into(), CaseScore { tp: 2, fp: 0, fn_: 0 }),
        ("b".into(), CaseScore { tp: 0, fp: 2, fn_: 2 }),
    ])
    .unwrap();
    assert_eq!(report.totals, CaseScore { tp: 2, fp: 2, fn_: 2 });
    assert_eq!(report.micro.precision, 50.0);
    assert_eq!(report.micro.recall, 50.0);
    assert_eq!(report.micro.f1, 50.0);
}

#[test]
fn zero_denominators_give_zero() {
    let m = CaseScore::default().metrics();
    assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    assert!(aggregate(&[]).is_err());
}
