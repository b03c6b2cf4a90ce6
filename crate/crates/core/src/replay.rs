use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::perception::OBS_DIM;

pub const ACT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: [f64; OBS_DIM],
    pub a: [f64; ACT_DIM],
    pub r: f64,
    pub s_next: [f64; OBS_DIM],
    /// Terminal for value purposes: no bootstrap from `s_next`.
    pub done: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.r.is_finite()
            && self.s.iter().chain(&self.s_next).chain(&self.a).all(|v| v.is_finite())
    }
}

/// Fixed-capacity ring of transitions, evicting oldest first and sampling
/// uniformly with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            data: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Drops all stored transitions; the sampling RNG keeps its stream.
    pub fn clear(&mut self) {
        self.data.clear();
        self.next = 0;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn sample_indices(&mut self, batch: usize) -> Vec<usize> {
        assert!(!self.data.is_empty(), "sampling from an empty buffer");
        let n = self.data.len();
        (0..batch).map(|_| self.rng.random_range(0..n)).collect()
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.data.len() < self.capacity { 0 } else { self.next };
        self.data[split..].iter().chain(&self.data[..split])
    }
}
