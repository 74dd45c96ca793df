use std::collections::VecDeque;

use rand::Rng;

use super::SkillId;
use crate::{ResourceVector, TerminalKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: ResourceVector,
    pub skill: SkillId,
    /// Action as emitted by the policy, before environment clamping.
    pub action: ResourceVector,
    pub next_state: ResourceVector,
    pub done: bool,
    pub terminal_kind: TerminalKind,
}

/// Fixed-capacity FIFO of transitions; the oldest entry is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 20)),
        }
    }

    pub fn push(&mut self, transition: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(transition);
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

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch_size: usize) -> Vec<Transition> {
        assert!(!self.items.is_empty(), "cannot sample an empty buffer");
        (0..batch_size)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}
