use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::features::PhaseDescriptor;

/// One stage of experience: the phase at stage start, the coefficients used
/// (after exploration noise), the stage reward and the following phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: PhaseDescriptor,
    pub theta: Vec<f64>,
    pub reward: f64,
    pub s_next: PhaseDescriptor,
    pub done: bool,
}

/// Fixed-capacity ring buffer; the oldest transition is evicted first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    total_pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
            total_pushed: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.total_pushed += 1;
    }

    /// Pushes a barrier's worth of per-worker transitions in worker order.
    pub fn push_round(&mut self, per_worker: Vec<Vec<Transition>>) {
        for ts in per_worker {
            for t in ts {
                self.push(t);
            }
        }
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

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}
