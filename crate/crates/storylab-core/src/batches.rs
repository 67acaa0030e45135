//! Interleaves two item streams into training batches with balanced group
//! composition.
//!
//! Each group is consumed as an endless sequence of seeded epoch
//! permutations: epoch e of group A is a reshuffle under
//! `derive_seed(seed, "group-a", e)`, so no item repeats within an epoch and
//! the whole schedule is a pure function of the seed. Batch slots pick a
//! group either by an independent fair coin per slot (default) or by an
//! exact half/half quota per batch (`strict_quota`), then take that group's
//! next item.
//!
//! Under `StopAtShorter` the stream ends the moment a pick hits an exhausted
//! group; a partially filled batch is dropped, so every emitted batch is
//! full-size.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::seed::derive_seed;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StreamError {
    #[error("group {0} has no items")]
    EmptyGroup(String),
    #[error("strict quota needs an even batch size, got {0}")]
    OddBatchSize(usize),
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochPolicy {
    /// Reshuffle an exhausted group and keep going; the stream is endless.
    CycleReshuffle,
    /// End the stream when either group runs out.
    StopAtShorter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub seed: u64,
    pub epoch_policy: EpochPolicy,
    /// Exact half/half composition per batch instead of per-slot coin flips.
    pub strict_quota: bool,
}

impl Default for BatchSpec {
    fn default() -> BatchSpec {
        BatchSpec {
            batch_size: 80,
            seed: 0,
            epoch_policy: EpochPolicy::CycleReshuffle,
            strict_quota: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLabel {
    A,
    B,
}

impl GroupLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupLabel::A => "a",
            GroupLabel::B => "b",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem<T> {
    pub group: GroupLabel,
    pub item: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch<T> {
    pub index: u64,
    pub items: Vec<BatchItem<T>>,
    /// Items per group label, e.g. {"a": 42, "b": 38}.
    pub composition: BTreeMap<String, u64>,
}

struct EpochStream<'a, T> {
    items: &'a [T],
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    label: &'static str,
    base_seed: u64,
}

impl<'a, T> EpochStream<'a, T> {
    fn new(items: &'a [T], label: &'static str, base_seed: u64) -> EpochStream<'a, T> {
        let mut stream = EpochStream {
            items,
            order: (0..items.len()).collect(),
            pos: 0,
            epoch: 0,
            label,
            base_seed,
        };
        stream.shuffle();
        stream
    }

    fn shuffle(&mut self) {
        let seed = derive_seed(self.base_seed, self.label, self.epoch);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        self.order.shuffle(&mut rng);
    }

    fn next(&mut self, cycle: bool) -> Option<&'a T> {
        if self.pos == self.order.len() {
            if !cycle {
                return None;
            }
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        let item = &self.items[self.order[self.pos]];
        self.pos += 1;
        Some(item)
    }
}

pub struct BalancedStream<'a, T> {
    a: EpochStream<'a, T>,
    b: EpochStream<'a, T>,
    coin: ChaCha12Rng,
    spec: BatchSpec,
    index: u64,
    done: bool,
}

/// Balanced batches over two groups. With `CycleReshuffle` the iterator is
/// endless; bound it with `take`.
pub fn balanced_batches<'a, T: Clone>(
    group_a: &'a [T],
    group_b: &'a [T],
    spec: &BatchSpec,
) -> Result<BalancedStream<'a, T>, StreamError> {
    if spec.batch_size == 0 {
        return Err(StreamError::ZeroBatchSize);
    }
    if group_a.is_empty() {
        return Err(StreamError::EmptyGroup("a".into()));
    }
    if group_b.is_empty() {
        return Err(StreamError::EmptyGroup("b".into()));
    }
    if spec.strict_quota && !spec.batch_size.is_multiple_of(2) {
        return Err(StreamError::OddBatchSize(spec.batch_size));
    }
    Ok(BalancedStream {
        a: EpochStream::new(group_a, "group-a", spec.seed),
        b: EpochStream::new(group_b, "group-b", spec.seed),
        coin: ChaCha12Rng::seed_from_u64(derive_seed(spec.seed, "coin", 0)),
        spec: *spec,
        index: 0,
        done: false,
    })
}

impl<T: Clone> Iterator for BalancedStream<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.done {
            return None;
        }
        let n = self.spec.batch_size;
        let labels: Vec<GroupLabel> = if self.spec.strict_quota {
            let mut labels = vec![GroupLabel::A; n / 2];
            labels.extend(std::iter::repeat_n(GroupLabel::B, n / 2));
            labels.shuffle(&mut self.coin);
            labels
        } else {
            (0..n)
                .map(|_| {
                    if self.coin.random_bool(0.5) {
                        GroupLabel::A
                    } else {
                        GroupLabel::B
                    }
                })
                .collect()
        };

        let cycle = self.spec.epoch_policy == EpochPolicy::CycleReshuffle;
        let mut items = Vec::with_capacity(n);
        let mut composition: BTreeMap<String, u64> = BTreeMap::new();
        for label in labels {
            let source = match label {
                GroupLabel::A => &mut self.a,
                GroupLabel::B => &mut self.b,
            };
            match source.next(cycle) {
                Some(item) => {
                    items.push(BatchItem {
                        group: label,
                        item: item.clone(),
                    });
                    *composition.entry(label.as_str().to_string()).or_insert(0) += 1;
                }
                None => {
                    // Partial batch is dropped.
                    self.done = true;
                    return None;
                }
            }
        }
        let batch = Batch {
            index: self.index,
            items,
            composition,
        };
        self.index += 1;
        Some(batch)
    }
}

pub struct UnbalancedStream<'a, T> {
    stream: EpochStream<'a, T>,
    spec: BatchSpec,
    index: u64,
    done: bool,
}

/// Single-group batches under the same epoch-permutation schedule, labeled
/// entirely group A. The comparison arm for balanced-vs-not experiments.
pub fn unbalanced_batches<'a, T: Clone>(
    items: &'a [T],
    spec: &BatchSpec,
) -> Result<UnbalancedStream<'a, T>, StreamError> {
    if spec.batch_size == 0 {
        return Err(StreamError::ZeroBatchSize);
    }
    if items.is_empty() {
        return Err(StreamError::EmptyGroup("a".into()));
    }
    Ok(UnbalancedStream {
        stream: EpochStream::new(items, "group-a", spec.seed),
        spec: *spec,
        index: 0,
        done: false,
    })
}

impl<T: Clone> Iterator for UnbalancedStream<'_, T> {
    type Item = Batch<T>;

    fn next(&mut self) -> Option<Batch<T>> {
        if self.done {
            return None;
        }
        let cycle = self.spec.epoch_policy == EpochPolicy::CycleReshuffle;
        let mut items = Vec::with_capacity(self.spec.batch_size);
        for _ in 0..self.spec.batch_size {
            match self.stream.next(cycle) {
                Some(item) => items.push(BatchItem {
                    group: GroupLabel::A,
                    item: item.clone(),
                }),
                None => {
                    self.done = true;
                    return None;
                }
            }
        }
        let composition =
            BTreeMap::from([("a".to_string(), items.len() as u64)]);
        let batch = Batch {
            index: self.index,
            items,
            composition,
        };
        self.index += 1;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn coin_balance_stays_near_half() {
        let a = ids("a", 500);
        let b = ids("b", 500);
        let spec = BatchSpec {
            batch_size: 40,
            seed: 99,
            ..BatchSpec::default()
        };
        let batches: Vec<_> = balanced_batches(&a, &b, &spec).unwrap().take(200).collect();
        assert_eq!(batches.len(), 200);
        let total_a: u64 = batches
            .iter()
            .map(|b| b.composition.get("a").copied().unwrap_or(0))
            .sum();
        let fraction = total_a as f64 / (200.0 * 40.0);
        assert!(
            (fraction - 0.5).abs() < 0.05,
            "group A fraction drifted to {fraction}"
        );
    }

    #[test]
    fn same_seed_reproduces_the_stream_exactly() {
        let a = ids("a", 30);
        let b = ids("b", 20);
        let spec = BatchSpec {
            batch_size: 8,
            seed: 7,
            ..BatchSpec::default()
        };
        let one: Vec<_> = balanced_batches(&a, &b, &spec).unwrap().take(25).collect();
        let two: Vec<_> = balanced_batches(&a, &b, &spec).unwrap().take(25).collect();
        assert_eq!(one, two);
        let other = BatchSpec { seed: 8, ..spec };
        let three: Vec<_> = balanced_batches(&a, &b, &other).unwrap().take(25).collect();
        assert_ne!(one, three);
    }

    #[test]
    fn composition_matches_item_labels() {
        let a = ids("a", 50);
        let b = ids("b", 50);
        let spec = BatchSpec {
            batch_size: 16,
            seed: 3,
            ..BatchSpec::default()
        };
        for batch in balanced_batches(&a, &b, &spec).unwrap().take(40) {
            let counted_a = batch
                .items
                .iter()
                .filter(|i| i.group == GroupLabel::A)
                .count() as u64;
            assert_eq!(batch.composition.get("a").copied().unwrap_or(0), counted_a);
            let total: u64 = batch.composition.values().sum();
            assert_eq!(total as usize, batch.items.len());
            assert_eq!(batch.items.len(), 16);
            // Items from group A really are group-A items.
            for item in &batch.items {
                let expected_prefix = item.group.as_str();
                assert!(item.item.starts_with(expected_prefix));
            }
        }
    }

    #[test]
    fn epoch_permutation_has_no_repeats() {
        // With strict quota, group A contributes exactly 4 items per batch;
        // 5 batches consume one full 20-item epoch with no duplicates.
        let a = ids("a", 20);
        let b = ids("b", 20);
        let spec = BatchSpec {
            batch_size: 8,
            seed: 11,
            epoch_policy: EpochPolicy::CycleReshuffle,
            strict_quota: true,
        };
        let batches: Vec<_> = balanced_batches(&a, &b, &spec).unwrap().take(5).collect();
        let mut seen_a = std::collections::HashSet::new();
        for batch in &batches {
            for item in batch.items.iter().filter(|i| i.group == GroupLabel::A) {
                assert!(seen_a.insert(item.item.clone()), "repeat within epoch");
            }
        }
        assert_eq!(seen_a.len(), 20);
    }

    #[test]
    fn strict_quota_is_exact_every_batch() {
        let a = ids("a", 100);
        let b = ids("b", 100);
        let spec = BatchSpec {
            batch_size: 10,
            seed: 5,
            epoch_policy: EpochPolicy::CycleReshuffle,
            strict_quota: true,
        };
        for batch in balanced_batches(&a, &b, &spec).unwrap().take(50) {
            assert_eq!(batch.composition["a"], 5);
            assert_eq!(batch.composition["b"], 5);
        }
    }

    #[test]
    fn strict_quota_rejects_odd_batch_size() {
        let a = ids("a", 10);
        let b = ids("b", 10);
        let spec = BatchSpec {
            batch_size: 7,
            strict_quota: true,
            ..BatchSpec::default()
        };
        assert_eq!(
            balanced_batches(&a, &b, &spec).err().unwrap(),
            StreamError::OddBatchSize(7)
        );
    }

    #[test]
    fn stop_at_shorter_ends_without_partial_batches() {
        let a = ids("a", 12);
        let b = ids("b", 1000);
        let spec = BatchSpec {
            batch_size: 10,
            seed: 2,
            epoch_policy: EpochPolicy::StopAtShorter,
            strict_quota: true,
        };
        let batches: Vec<_> = balanced_batches(&a, &b, &spec).unwrap().collect();
        // Group A supplies 5 per batch and holds 12 items: two full batches,
        // then the third draw exhausts A and the partial batch is dropped.
        assert_eq!(batches.len(), 2);
        for batch in &batches {
            assert_eq!(batch.items.len(), 10);
        }
    }

    #[test]
    fn empty_groups_are_rejected() {
        let empty: Vec<String> = Vec::new();
        let full = ids("b", 5);
        let spec = BatchSpec::default();
        assert_eq!(
            balanced_batches(&empty, &full, &spec).err().unwrap(),
            StreamError::EmptyGroup("a".into())
        );
        assert_eq!(
            balanced_batches(&full, &empty, &spec).err().unwrap(),
            StreamError::EmptyGroup("b".into())
        );
        assert_eq!(
            unbalanced_batches(&empty, &spec).err().unwrap(),
            StreamError::EmptyGroup("a".into())
        );
    }

    #[test]
    fn unbalanced_stream_covers_every_item_per_epoch() {
        let items = ids("x", 24);
        let spec = BatchSpec {
            batch_size: 6,
            seed: 13,
            epoch_policy: EpochPolicy::StopAtShorter,
            strict_quota: false,
        };
        let batches: Vec<_> = unbalanced_batches(&items, &spec).unwrap().collect();
        assert_eq!(batches.len(), 4);
        let mut seen = std::collections::HashSet::new();
        for batch in &batches {
            for item in &batch.items {
                assert!(seen.insert(item.item.clone()));
            }
        }
        assert_eq!(seen.len(), 24);
    }

    #[test]
    fn batch_indices_are_sequential() {
        let a = ids("a", 10);
        let b = ids("b", 10);
        let spec = BatchSpec {
            batch_size: 4,
            ..BatchSpec::default()
        };
        let batches: Vec<_> = balanced_batches(&a, &b, &spec).unwrap().take(10).collect();
        for (i, batch) in batches.iter().enumerate() {
            assert_eq!(batch.index, i as u64);
        }
    }
}
