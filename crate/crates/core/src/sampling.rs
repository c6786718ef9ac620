//! Epoch composition for fine-tuning on a data patch.
//!
//! Both modes visit every new (D2) example once per epoch and add
//! `round(p · |D1|)` old examples:
//!
//! * `Replay` draws the old examples once and reuses that buffer every epoch.
//! * `Sample` draws a fresh subset of D1 without replacement each epoch, so
//!   each old example is seen with probability `p` per epoch.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::round_half_even;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    Replay,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    pub p: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err("sampler p must be in [0, 1]");
        }
        if self.batch_size == 0 {
            return Err("batch size must be at least 1");
        }
        Ok(())
    }
}

/// Number of old examples mixed into each epoch.
pub fn old_count(p: f64, d1_len: usize) -> usize {
    round_half_even(p * d1_len as f64).min(d1_len)
}

/// Which segment a planned example comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Segment {
    Old,
    New,
}

/// One planned visit: an index into D1 (`Old`) or D2 (`New`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlanEntry {
    pub segment: Segment,
    pub index: usize,
}

/// Fixed set of D1 indices reused for a whole fine-tuning run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub indices: Vec<usize>,
}

fn replay_seed(seed: u64, p: f64) -> u64 {
    seed::derive_indexed(seed, "replay", p.to_bits())
}

/// Seeded uniform draw of `round(p · |D1|)` D1 indices, keyed on `(seed, p)`.
pub fn build_replay(d1_len: usize, p: f64, seed: u64) -> ReplayBuffer {
    let n = old_count(p, d1_len);
    let mut rng = seed::rng(replay_seed(seed, p));
    let mut indices = rand::seq::index::sample(&mut rng, d1_len, n).into_vec();
    indices.sort_unstable();
    ReplayBuffer { indices }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub entries: Vec<PlanEntry>,
    pub n_old: usize,
    pub n_new: usize,
}

impl EpochPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn old_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .entries
            .iter()
            .filter(|e| e.segment == Segment::Old)
            .map(|e| e.index)
            .collect();
        v.sort_unstable();
        v
    }
}

/// Builds epoch plans for one fine-tuning run.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    config: SamplerConfig,
    d1_len: usize,
    d2_len: usize,
    buffer: ReplayBuffer,
}

impl EpochSampler {
    pub fn new(d1_len: usize, d2_len: usize, config: SamplerConfig) -> Self {
        let buffer = match config.mode {
            SamplerMode::Replay => build_replay(d1_len, config.p, config.seed),
            SamplerMode::Sample => ReplayBuffer {
                indices: Vec::new(),
            },
        };
        EpochSampler {
            config,
            d1_len,
            d2_len,
            buffer,
        }
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn epoch_len(&self) -> usize {
        self.d2_len + old_count(self.config.p, self.d1_len)
    }

    pub fn plan(&self, epoch_index: u64) -> EpochPlan {
        let old: Vec<usize> = match self.config.mode {
            SamplerMode::Replay => self.buffer.indices.clone(),
            SamplerMode::Sample => {
                let n = old_count(self.config.p, self.d1_len);
                let mut rng =
                    seed::rng(seed::derive_indexed(self.config.seed, "sample", epoch_index));
                rand::seq::index::sample(&mut rng, self.d1_len, n).into_vec()
            }
        };
        let n_old = old.len();
        let mut entries: Vec<PlanEntry> = old
            .into_iter()
            .map(|index| PlanEntry {
                segment: Segment::Old,
                index,
            })
            .chain((0..self.d2_len).map(|index| PlanEntry {
                segment: Segment::New,
                index,
            }))
            .collect();
        entries.sort_unstable();
        entries.shuffle(&mut seed::rng(seed::derive_indexed(
            self.config.seed,
            "shuffle",
            epoch_index,
        )));
        EpochPlan {
            entries,
            n_old,
            n_new: self.d2_len,
        }
    }
}

/// Plan for one epoch; a convenience over [`EpochSampler`].
pub fn epoch_plan(d1_len: usize, d2_len: usize, config: &SamplerConfig, epoch_index: u64) -> EpochPlan {
    EpochSampler::new(d1_len, d2_len, *config).plan(epoch_index)
}

/// Contiguous chunks of `batch_size`; the last one may be short.
pub fn batches(plan: &EpochPlan, batch_size: usize) -> impl Iterator<Item = &[PlanEntry]> {
    plan.entries.chunks(batch_size.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cfg(mode: SamplerMode, p: f64) -> SamplerConfig {
        SamplerConfig {
            mode,
            p,
            batch_size: 4,
            seed: 11,
        }
    }

    #[test]
    fn replay_buffer_sizes() {
        assert!(build_replay(1000, 0.0, 1).indices.is_empty());
        assert_eq!(build_replay(1000, 1.0, 1).indices, (0..1000).collect::<Vec<_>>());
        let b = build_replay(1000, 0.1, 1);
        assert_eq!(b.indices.len(), 100);
        assert_eq!(b, build_replay(1000, 0.1, 1));
    }

    #[test]
    fn zero_p_plans_only_new_data() {
        for mode in [SamplerMode::Replay, SamplerMode::Sample] {
            let plan = epoch_plan(50, 7, &cfg(mode, 0.0), 3);
            assert_eq!((plan.n_old, plan.n_new), (0, 7));
            assert!(plan.entries.iter().all(|e| e.segment == Segment::New));
        }
    }

    #[test]
    fn replay_reuses_the_same_old_ids() {
        let sampler = EpochSampler::new(200, 10, cfg(SamplerMode::Replay, 0.3));
        let first = sampler.plan(0).old_indices();
        assert_eq!(first.len(), 60);
        for epoch in 1..20 {
            assert_eq!(sampler.plan(epoch).old_indices(), first);
        }
    }

    #[test]
    fn sample_mode_redraws() {
        let sampler = EpochSampler::new(200, 10, cfg(SamplerMode::Sample, 0.3));
        assert_ne!(sampler.plan(0).old_indices(), sampler.plan(1).old_indices());
        assert_eq!(sampler.plan(5), sampler.plan(5));
    }

    #[test]
    fn batch_sizes() {
        let plan = epoch_plan(0, 10, &cfg(SamplerMode::Replay, 0.0), 0);
        let sizes: Vec<usize> = batches(&plan, 4).map(<[PlanEntry]>::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(batches(&plan, 64).count(), 1);
        let joined: Vec<PlanEntry> = batches(&plan, 3).flatten().copied().collect();
        assert_eq!(joined, plan.entries);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(SamplerMode::Sample, 1.5).validate().is_err());
        assert!(SamplerConfig { batch_size: 0, ..cfg(SamplerMode::Sample, 0.5) }.validate().is_err());
        assert!(cfg(SamplerMode::Sample, 0.5).validate().is_ok());
    }
}
