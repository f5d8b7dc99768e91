use std::collections::VecDeque;

use crate::rng::SeededRng;
use crate::transition::Transition;

/// Bounded FIFO of transitions. Each entry remembers when it was inserted so
/// the mean age of the stored data can be reported.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<(u64, Transition)>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends a transition, evicting the oldest one when full.
    pub fn push(&mut self, tr: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((self.inserted, tr));
        self.inserted += 1;
    }

    /// Up to `batch` distinct transitions, uniformly without replacement.
    pub fn sample(&self, batch: usize, rng: &mut SeededRng) -> Vec<Transition> {
        rng.sample_indices(self.items.len(), batch.min(self.items.len()))
            .into_iter()
            .map(|i| self.items[i].1.clone())
            .collect()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter().map(|(_, tr)| tr)
    }

    /// Mean number of insertions since each stored transition was added.
    pub fn mean_age(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        let total: u64 = self.items.iter().map(|(t, _)| self.inserted - 1 - t).sum();
        total as f64 / self.items.len() as f64
    }
}
