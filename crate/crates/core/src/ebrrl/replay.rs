//! Fixed-capacity ring of transitions with seeded uniform sampling.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stem::RAW_PREDICTIONS;

/// Length of a state digest.
pub const DIGEST_LEN: usize = 16;

/// Default capacity.
pub const BUFFER_CAPACITY: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: [f32; DIGEST_LEN],
    /// The clamped modality parameters that were applied.
    pub action: [f32; RAW_PREDICTIONS],
    pub reward: f64,
    pub next_state: [f32; DIGEST_LEN],
    pub terminal: bool,
    /// Index of the training image the action was taken on.
    pub sample: usize,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.reward) {
            return Err(Error::domain(format!(
                "reward {} outside [0, 1]",
                self.reward
            )));
        }
        let finite = self
            .state
            .iter()
            .chain(&self.next_state)
            .chain(&self.action)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::non_finite(
                "transition",
                "non-finite digest or action",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity: capacity.max(1),
            storage: VecDeque::with_capacity(capacity.min(BUFFER_CAPACITY)),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
    }

    /// Oldest first.
    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.storage.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// `n` distinct transitions chosen uniformly at random.
    pub fn sample_batch(&mut self, n: usize) -> Result<Vec<Transition>> {
        if n == 0 || self.storage.len() < n {
            return Err(Error::NotReady {
                have: self.storage.len(),
                need: n.max(1),
            });
        }
        Ok(index::sample(&mut self.rng, self.storage.len(), n)
            .into_iter()
            .map(|i| self.storage[i].clone())
            .collect())
    }

    /// Empirical transition frequencies keyed by (colormap id, reward
    /// decile).
    pub fn transition_counts(&self) -> BTreeMap<(u8, u8), usize> {
        let mut m = BTreeMap::new();
        for t in &self.storage {
            let decile = ((t.reward * 10.0).floor() as u8).min(9);
            *m.entry((t.action[0] as u8, decile)).or_insert(0) += 1;
        }
        m
    }
}
