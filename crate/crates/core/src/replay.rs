//! Capacity-bounded prioritized transition store.
//!
//! Sampling follows P(i) = p_i^α / Σ_j p_j^α with importance weights
//! w_i = (N·P(i))^(−β) normalized by the largest weight in the buffer, so
//! every returned weight lies in (0, 1].

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::graph::{Assignment, JobAllocationGraph};

pub const DEFAULT_CAPACITY: usize = 1_000_000;
pub const DEFAULT_ALPHA: f64 = 0.6;
pub const DEFAULT_BETA: f64 = 0.4;
/// Additive floor keeping priorities strictly positive.
pub const DEFAULT_PRIORITY_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot sample from an empty buffer")]
    EmptyBuffer,
}

/// One stored transition. `priority` is managed by the buffer: inserts take
/// the current maximum and updates set |δ| + ε.
#[derive(Clone, Debug)]
pub struct TransitionSample {
    pub state: Arc<JobAllocationGraph>,
    pub action: Assignment,
    pub reward: f64,
    pub next_state: Arc<JobAllocationGraph>,
    pub done: bool,
    pub priority: f64,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    alpha: f64,
    beta: f64,
    epsilon: f64,
    items: Vec<TransitionSample>,
    next_slot: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, alpha: f64, beta: f64, epsilon: f64) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            capacity,
            alpha,
            beta,
            epsilon,
            items: Vec::new(),
            next_slot: 0,
        }
    }

    pub fn with_defaults() -> Self {
        Self::new(
            DEFAULT_CAPACITY,
            DEFAULT_ALPHA,
            DEFAULT_BETA,
            DEFAULT_PRIORITY_EPSILON,
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &TransitionSample {
        &self.items[index]
    }

    /// Stores a transition at the maximum existing priority (1 when empty),
    /// overwriting the oldest slot once at capacity.
    pub fn insert(&mut self, mut sample: TransitionSample) -> usize {
        let priority = self
            .items
            .iter()
            .map(|t| t.priority)
            .fold(f64::NEG_INFINITY, f64::max);
        sample.priority = if priority.is_finite() { priority } else { 1.0 };
        if self.items.len() < self.capacity {
            self.items.push(sample);
            self.items.len() - 1
        } else {
            let slot = self.next_slot;
            self.items[slot] = sample;
            self.next_slot = (slot + 1) % self.capacity;
            slot
        }
    }

    /// The closed-form sampling distribution over current priorities.
    pub fn sampling_distribution(&self) -> Vec<f64> {
        let powered: Vec<f64> = self.items.iter().map(|t| t.priority.powf(self.alpha)).collect();
        let total: f64 = powered.iter().sum();
        powered.into_iter().map(|p| p / total).collect()
    }

    /// Closed-form importance weights for every stored transition, already
    /// normalized by the maximum weight.
    pub fn importance_weights(&self) -> Vec<f64> {
        let probs = self.sampling_distribution();
        let min_p = probs.iter().copied().fold(f64::INFINITY, f64::min);
        probs
            .into_iter()
            .map(|p| (min_p / p).powf(self.beta))
            .collect()
    }

    /// Draws `batch` indices (with replacement) from the priority
    /// distribution and returns them with their normalized importance
    /// weights.
    pub fn sample(
        &self,
        batch: usize,
        rng: &mut impl Rng,
    ) -> Result<(Vec<usize>, Vec<f64>), ReplayError> {
        if self.items.is_empty() {
            return Err(ReplayError::EmptyBuffer);
        }
        let powered: Vec<f64> = self.items.iter().map(|t| t.priority.powf(self.alpha)).collect();
        let mut cumulative = Vec::with_capacity(powered.len());
        let mut acc = 0.0;
        for p in &powered {
            acc += p;
            cumulative.push(acc);
        }
        let total = acc;
        let min_powered = powered.iter().copied().fold(f64::INFINITY, f64::min);
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let r = rng.gen::<f64>() * total;
            let idx = match cumulative.binary_search_by(|c| c.partial_cmp(&r).unwrap()) {
                Ok(i) => (i + 1).min(self.items.len() - 1),
                Err(i) => i.min(self.items.len() - 1),
            };
            indices.push(idx);
            // (N·P(i))^(−β) / (N·P_min)^(−β) = (min/p_i)^β.
            weights.push((min_powered / powered[idx]).powf(self.beta));
        }
        Ok((indices, weights))
    }

    /// Resets a transition's priority from its latest temporal-difference
    /// error.
    pub fn update_priority(&mut self, index: usize, td_error: f64) {
        self.items[index].priority = td_error.abs() + self.epsilon;
    }
}
