use patchtune_core::datagen::{builtin_grammar, generate_stream, GenConfig};
use patchtune_core::metrics::*;
use patchtune_core::treebank::{parse_top, ParseTree};
use proptest::prelude::*;

const GOLD: &str = "[IN:GET_DEPARTURE when should i leave for my [SL:DESTINATION [IN:GET_EVENT \
    [SL:NAME_EVENT dentist ] [SL:CATEGORY_EVENT appointment ] ] ] at [SL:TIME_ARRIVAL 4 pm ] ]";
const PRED: &str = "[IN:GET_DEPARTURE when should i leave for [SL:DESTINATION [IN:GET_EVENT \
    [SL:NAME_EVENT my dentist ] [SL:CATEGORY_EVENT appointment ] ] ] at [SL:TIME_ARRIVAL 4 pm ] ]";

fn corpus(seed: u64, n: usize) -> Vec<ParseTree> {
    let cfg = GenConfig {
        seed,
        n_train: n,
        n_test: 1,
        n_dev: 0,
        tail_exponent: 1.0,
    };
    generate_stream(&builtin_grammar(), &cfg, "m", n).unwrap().trees()
}

#[test]
fn worked_example_counts() {
    let gold = [parse_top(GOLD).unwrap()];
    let pred = [parse_top(PRED).unwrap()];
    let r = tp_f1(&gold, &pred).unwrap();
    assert_eq!((r.n_correct, r.n_predicted, r.n_expected), (2, 4, 4));
    assert_eq!(r.f1, 0.5);
    assert_eq!(per_class_tp_f1(&gold, &pred, "SL:NAME_EVENT").unwrap().f1, 0.0);
    assert_eq!(exact_match(&gold, &pred).unwrap(), 0.0);
}

#[test]
fn gold_against_itself_is_perfect() {
    let gold = corpus(3, 400);
    let eval = CorpusEvaluation::new(&gold, &gold).unwrap();
    let rep = eval.folded_report(5, 1).unwrap();
    assert_eq!(rep.exact_match.mean, 1.0);
    assert_eq!(rep.tp_f1.mean, 1.0);
    assert_eq!(rep.exact_match.per_fold.len(), 5);
    // A fold without any path of a rare class scores 0 for that class.
    assert!(rep.per_class.values().flat_map(|s| &s.per_fold).all(|v| *v == 0.0 || *v == 1.0));
    assert_eq!(rep.per_class["SL:DATE"].mean, 1.0);
    assert_eq!(rep.per_class["SL:DATE"].std, 0.0);
}

#[test]
fn length_mismatch_and_fold_errors() {
    let gold = corpus(1, 5);
    assert!(matches!(tp_f1(&gold, &gold[..4]), Err(MetricsError::LengthMismatch { .. })));
    assert!(fold_assignment(3, 5, 0).is_err());
}

#[test]
fn folds_partition_indices() {
    let folds = fold_assignment(103, 5, 77).unwrap();
    let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![21, 21, 21, 20, 20]);
    let mut all: Vec<usize> = folds.concat();
    all.sort();
    assert_eq!(all, (0..103).collect::<Vec<_>>());
    assert_eq!(folds, fold_assignment(103, 5, 77).unwrap());
}

#[test]
fn degradation_needs_more_than_two_sigma() {
    let s = |mean: f64, std: f64| UncertainScore { mean, std, n_folds: 5, per_fold: vec![] };
    assert!(!is_degraded(&s(0.9, 0.05), &s(0.8, 0.0)));
    assert!(is_degraded(&s(0.9, 0.05), &s(0.79, 0.0)));
    assert!(is_degraded(&s(1.0, 0.0), &s(0.999, 0.0)));
    assert!(!is_degraded(&s(0.5, 0.0), &s(0.9, 0.0)));
}

#[test]
fn fold_std_matches_sample_formula() {
    let u = UncertainScore::from_folds(vec![0.5, 0.7, 0.9]);
    assert!((u.mean - 0.7).abs() < 1e-12);
    assert!((u.std - 0.2).abs() < 1e-12);
}

proptest! {
    #[test]
    fn tp_f1_is_symmetric_in_f1_and_bounded(seed_a in 0u64..1000, seed_b in 0u64..1000) {
        let a = corpus(seed_a, 20);
        let b = corpus(seed_b, 20);
        let ab = tp_f1(&a, &b).unwrap();
        let ba = tp_f1(&b, &a).unwrap();
        prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert!((0.0..=1.0).contains(&ab.f1));
        prop_assert!(exact_match(&a, &b).unwrap() <= 1.0);
    }

    #[test]
    fn fixing_one_prediction_never_lowers_counts(seed_a in 0u64..1000, seed_b in 0u64..1000, k in 0usize..20) {
        let gold = corpus(seed_a, 20);
        let mut pred = corpus(seed_b, 20);
        let before = tp_f1(&gold, &pred).unwrap();
        pred[k] = gold[k].clone();
        let after = tp_f1(&gold, &pred).unwrap();
        prop_assert!(after.n_correct >= before.n_correct);
        prop_assert!(exact_match(&gold, &pred).unwrap() >= exact_match(&gold, &corpus(seed_b, 20)).unwrap());
    }
}
