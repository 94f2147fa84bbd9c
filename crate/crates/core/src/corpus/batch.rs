use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sample::DialogSample;
use crate::error::{Error, Result};
use crate::sts::SemanticTree;
use crate::tensor::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pool {
    Labeled,
    Unlabeled,
}

/// Reference to a sample in one of the two pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slot {
    pub pool: Pool,
    pub index: usize,
}

/// A mixed batch `[x_1..x_N, x_1⁺..x_N⁺]`: the first `N/2` entries come
/// from the labeled pool, the next `N/2` from the unlabeled pool, and entry
/// `i + N` is the dropout duplicate of entry `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    slots: Vec<Slot>,
}

impl Batch {
    pub fn from_slots(slots: Vec<Slot>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::Batch("batch has no samples".into()));
        }
        Ok(Batch { slots })
    }

    /// Number of distinct samples `N`.
    pub fn n(&self) -> usize {
        self.slots.len()
    }

    /// Number of entries `2N`.
    pub fn len(&self) -> usize {
        2 * self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, entry: usize) -> Slot {
        self.slots[entry % self.n()]
    }

    /// The first `N` slots; entries `N..2N` repeat them.
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn dup(&self, entry: usize) -> usize {
        let n = self.n();
        if entry < n {
            entry + n
        } else {
            entry - n
        }
    }

    /// Labeled entries with their duplicates, ascending.
    pub fn labeled_entries(&self) -> Vec<usize> {
        self.entries_in(Pool::Labeled)
    }

    pub fn unlabeled_entries(&self) -> Vec<usize> {
        self.entries_in(Pool::Unlabeled)
    }

    fn entries_in(&self, pool: Pool) -> Vec<usize> {
        (0..self.len()).filter(|&e| self.slot(e).pool == pool).collect()
    }

    /// Resolves all `2N` entries to their samples.
    pub fn samples<'a>(&self, labeled: &'a [DialogSample], unlabeled: &'a [DialogSample]) -> Vec<&'a DialogSample> {
        (0..self.len())
            .map(|e| {
                let s = self.slot(e);
                match s.pool {
                    Pool::Labeled => &labeled[s.index],
                    Pool::Unlabeled => &unlabeled[s.index],
                }
            })
            .collect()
    }

    /// Trees of the labeled entries in [`Self::labeled_entries`] order.
    /// Samples in the labeled pool without an annotation get an empty tree.
    pub fn labeled_trees(&self, labeled: &[DialogSample]) -> Vec<SemanticTree> {
        self.labeled_entries()
            .into_iter()
            .map(|e| labeled[self.slot(e).index].annotation.clone().unwrap_or_default())
            .collect()
    }
}

/// Epoch-based sampler over one pool: a fresh permutation each epoch,
/// consumed without replacement.
#[derive(Debug, Clone)]
struct EpochSampler {
    size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl EpochSampler {
    fn new(size: usize, seed: u64) -> Self {
        let mut s = EpochSampler { size, seed, epoch: 0, order: Vec::new(), cursor: 0 };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(rng::derive(self.seed, self.epoch));
        self.order = (0..self.size).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
        self.epoch += 1;
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        if self.cursor + k > self.size {
            self.reshuffle();
        }
        let out = self.order[self.cursor..self.cursor + k].to_vec();
        self.cursor += k;
        out
    }
}

/// Produces a stream of 1:1 mixed batches. Each pool is shuffled
/// independently per epoch; a partial tail that cannot fill half a batch is
/// dropped.
#[derive(Debug, Clone)]
pub struct MixedBatcher {
    half: usize,
    labeled: EpochSampler,
    unlabeled: EpochSampler,
}

const LABELED_STREAM: u64 = 0x006c_6162_656c_6564;
const UNLABELED_STREAM: u64 = 0x0075_6e6c_6162_656c;

impl MixedBatcher {
    pub fn new(labeled_len: usize, unlabeled_len: usize, n: usize, seed: u64) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::Config(format!("batch size N must be a positive even number, got {n}")));
        }
        let half = n / 2;
        for (name, len) in [("labeled", labeled_len), ("unlabeled", unlabeled_len)] {
            if len < half {
                let hint = (len * 2).max(2);
                return Err(Error::Config(format!(
                    "{name} pool has {len} samples but N={n} needs {half}; use N <= {hint}"
                )));
            }
        }
        Ok(MixedBatcher {
            half,
            labeled: EpochSampler::new(labeled_len, rng::derive(seed, LABELED_STREAM)),
            unlabeled: EpochSampler::new(unlabeled_len, rng::derive(seed, UNLABELED_STREAM)),
        })
    }

    pub fn next_batch(&mut self) -> Batch {
        let mut slots: Vec<Slot> = self
            .labeled
            .take(self.half)
            .into_iter()
            .map(|index| Slot { pool: Pool::Labeled, index })
            .collect();
        slots.extend(self.unlabeled.take(self.half).into_iter().map(|index| Slot { pool: Pool::Unlabeled, index }));
        Batch { slots }
    }
}

/// One mixed batch drawn from fresh epoch permutations.
pub fn make_batch(labeled: &[DialogSample], unlabeled: &[DialogSample], n: usize, seed: u64) -> Result<Batch> {
    Ok(MixedBatcher::new(labeled.len(), unlabeled.len(), n, seed)?.next_batch())
}
