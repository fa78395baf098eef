use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Transition;
use crate::error::{Error, Result};

/// Fixed-capacity ring of joint transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    cursor: usize,
    items: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay buffer capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            cursor: 0,
            items: Vec::new(),
        })
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

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if let Some(first) = self.items.first() {
            if first.num_agents() != t.num_agents() {
                return Err(Error::LengthMismatch {
                    expected: first.num_agents(),
                    actual: t.num_agents(),
                });
            }
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Distinct indices drawn uniformly.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<Vec<usize>> {
        if batch > self.items.len() {
            return Err(Error::InvalidConfig(format!(
                "minibatch of {batch} requested from {} stored transitions",
                self.items.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(rng, batch)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn get(&self, index: usize) -> Option<&Transition> {
        self.items.get(index)
    }
}
