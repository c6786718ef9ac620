use patchtune_core::datagen::{builtin_grammar, generate_stream, GenConfig};
use patchtune_core::dataset::*;
use proptest::prelude::*;

fn source(seed: u64, n: usize) -> Dataset {
    let cfg = GenConfig {
        seed,
        n_train: n,
        n_test: 1,
        n_dev: 0,
        tail_exponent: 1.0,
    };
    generate_stream(&builtin_grammar(), &cfg, "train", n).unwrap()
}

fn spec(class: &str, pct: f64, seed: u64) -> SplitSpec {
    SplitSpec {
        target_class: class.into(),
        percentage: pct,
        seed,
        coverage_per_class: 1,
    }
}

#[test]
fn rounding_is_half_even() {
    assert_eq!(round_half_even(2.5), 2);
    assert_eq!(round_half_even(3.5), 4);
    assert_eq!(round_half_even(2.4999), 2);
    assert_eq!(round_half_even(0.5), 0);
    assert_eq!(round_half_even(300.2), 300);
}

#[test]
fn moved_count_matches_percentage() {
    let src = source(1, 3000);
    let n = src.class_count("SL:ORGANIZER_EVENT");
    let r = make_split(&src, &spec("SL:ORGANIZER_EVENT", 95.0, 4)).unwrap();
    assert_eq!(r.moved_count, round_half_even(0.95 * n as f64));
    assert_eq!(r.d2.len() + r.coverage_ids.len(), r.moved_count);
    assert!(r.d2.examples().iter().all(|e| e.has_class("SL:ORGANIZER_EVENT")));
}

#[test]
fn unknown_class_and_bad_percentage() {
    let src = source(1, 200);
    assert!(matches!(make_split(&src, &spec("SL:NOPE", 50.0, 0)), Err(DatasetError::ClassNotFound(_))));
    assert!(matches!(make_split(&src, &spec("SL:DATE", 0.0, 0)), Err(DatasetError::InvalidSplit(_))));
    assert!(matches!(make_split(&src, &spec("SL:DATE", 101.0, 0)), Err(DatasetError::InvalidSplit(_))));
}

#[test]
fn full_move_returns_one_example_for_coverage() {
    let src = source(2, 2000);
    let r = make_split(&src, &spec("SL:ORGANIZER_EVENT", 100.0, 1)).unwrap();
    assert_eq!(r.d1.class_count("SL:ORGANIZER_EVENT"), 1);
    assert_eq!(r.coverage_ids.len(), 1);
    assert_eq!(r.d1.classes(), src.classes());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_conserves_examples_and_covers_classes(
        seed in 0u64..1000,
        pct in 1.0f64..=100.0,
        class_pick in 0usize..5,
    ) {
        let src = source(seed % 7, 800);
        let class = ["SL:ORGANIZER_EVENT", "SL:DATE", "IN:CANCEL", "SL:TODO", "IN:GET_EVENT"][class_pick];
        let r = make_split(&src, &spec(class, pct, seed)).unwrap();
        prop_assert_eq!(r.d1.len() + r.d2.len(), src.len());
        let mut ids: Vec<&str> = r.d1.examples().iter().chain(r.d2.examples()).map(|e| e.id.as_str()).collect();
        ids.sort();
        let mut orig: Vec<&str> = src.examples().iter().map(|e| e.id.as_str()).collect();
        orig.sort();
        prop_assert_eq!(ids, orig);
        prop_assert_eq!(r.d1.classes(), src.classes());
        let again = make_split(&src, &spec(class, pct, seed)).unwrap();
        prop_assert_eq!(again.d1, r.d1);
        prop_assert_eq!(again.d2, r.d2);
    }
}
