//! Fixed-capacity ring buffer of transitions with uniform mini-batch sampling.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("cannot sample {requested} transitions from an empty buffer")]
    Empty { requested: usize },
    #[error("batch size must be at least 1")]
    ZeroBatch,
}

/// One experience tuple. `done` is true only for genuine terminal states;
/// time-limit truncation keeps `done = false` so bootstrapping continues.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Ring buffer: once full, each push evicts the oldest transition.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, storage: Vec::with_capacity(capacity), cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Transitions in insertion order, oldest first.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() == self.capacity { self.cursor } else { 0 };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }

    /// `batch_size` independent uniform draws with replacement; any buffer
    /// holding at least one transition can be sampled.
    pub fn sample_uniform<'a, R: Rng + ?Sized>(
        &'a self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&'a Transition>, ReplayError> {
        if batch_size == 0 {
            return Err(ReplayError::ZeroBatch);
        }
        if self.storage.is_empty() {
            return Err(ReplayError::Empty { requested: batch_size });
        }
        Ok((0..batch_size)
            .map(|_| &self.storage[rng.gen_range(0..self.storage.len())])
            .collect())
    }
}
