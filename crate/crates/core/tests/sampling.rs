use std::collections::BTreeSet;

use patchtune_core::sampling::*;

fn cfg(mode: SamplerMode, p: f64) -> SamplerConfig {
    SamplerConfig { mode, p, batch_size: 32, seed: 42 }
}

#[test]
fn per_epoch_old_counts_are_exact() {
    for (p, want) in [(0.0, 0), (0.1, 100), (0.5, 500), (1.0, 1000)] {
        for mode in [SamplerMode::Replay, SamplerMode::Sample] {
            let s = EpochSampler::new(1000, 40, cfg(mode, p));
            for epoch in 0..5 {
                let plan = s.plan(epoch);
                assert_eq!(plan.n_old, want);
                assert_eq!(plan.len(), want + 40);
                let old: BTreeSet<usize> = plan.old_indices().into_iter().collect();
                assert_eq!(old.len(), want, "old draws are without replacement");
            }
        }
    }
}

#[test]
fn sample_mode_inclusion_rate_is_p() {
    for p in [0.1, 0.5] {
        let s = EpochSampler::new(1000, 10, cfg(SamplerMode::Sample, p));
        let mut hits = vec![0usize; 1000];
        for epoch in 0..50 {
            for i in s.plan(epoch).old_indices() {
                hits[i] += 1;
            }
        }
        let rate = hits.iter().sum::<usize>() as f64 / (50.0 * 1000.0);
        assert!((rate - p).abs() <= 0.05);
        let worst = hits.iter().map(|&h| (h as f64 / 50.0 - p).abs()).fold(0.0, f64::max);
        assert!(worst < 0.35, "per-example inclusion far from p: {worst}");
    }
}

#[test]
fn replay_set_is_fixed_and_keyed_on_seed_and_p() {
    let s = EpochSampler::new(1000, 10, cfg(SamplerMode::Replay, 0.1));
    let first = s.plan(0).old_indices();
    assert!((1..50).all(|e| s.plan(e).old_indices() == first));
    let other_seed = EpochSampler::new(1000, 10, SamplerConfig { seed: 43, ..cfg(SamplerMode::Replay, 0.1) });
    assert_ne!(other_seed.plan(0).old_indices(), first);
}

#[test]
fn every_new_example_appears_once_per_epoch() {
    let s = EpochSampler::new(300, 77, cfg(SamplerMode::Sample, 0.3));
    for epoch in 0..3 {
        let mut new: Vec<usize> = s
            .plan(epoch)
            .entries
            .iter()
            .filter(|e| e.segment == Segment::New)
            .map(|e| e.index)
            .collect();
        new.sort();
        assert_eq!(new, (0..77).collect::<Vec<_>>());
    }
}

#[test]
fn epochs_are_shuffled_differently() {
    let s = EpochSampler::new(0, 200, cfg(SamplerMode::Replay, 0.0));
    assert_ne!(s.plan(0).entries, s.plan(1).entries);
}
