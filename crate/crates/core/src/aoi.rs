//! Per-user Age of Information and the shared reward.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoiTracker {
    ages: Vec<u64>,
    /// Running `sum_t sum_m A_m(t)`.
    cumulative: u64,
    slots: u64,
}

/// A task finishing this slot, with its generation slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub user: usize,
    pub task: usize,
    pub gen_time: usize,
}

impl AoiTracker {
    /// All ages start at 0.
    pub fn new(users: usize) -> Self {
        Self { ages: vec![0; users], cumulative: 0, slots: 0 }
    }

    pub fn values(&self) -> &[u64] {
        &self.ages
    }

    pub fn cumulative(&self) -> u64 {
        self.cumulative
    }

    pub fn slots(&self) -> u64 {
        self.slots
    }

    /// Mean of `A_m(t)` over users and recorded slots.
    pub fn average(&self) -> f64 {
        if self.slots == 0 || self.ages.is_empty() {
            return 0.0;
        }
        self.cumulative as f64 / (self.slots as f64 * self.ages.len() as f64)
    }

    /// Advances every age by one slot, except users with a completion at
    /// `t`, whose age becomes `t - F`.
    pub fn update(&mut self, completions: &[Completion], t: usize) -> Result<()> {
        let mut reset = vec![None; self.ages.len()];
        for c in completions {
            if c.user >= self.ages.len() {
                return Err(Error::Consistency(format!("completion for unknown user {}", c.user)));
            }
            if c.gen_time > t {
                return Err(Error::Consistency(format!(
                    "task ({}, {}) completed at {t} before generation at {}",
                    c.user, c.task, c.gen_time
                )));
            }
            if reset[c.user].is_some() {
                return Err(Error::Consistency(format!("two completions for user {}", c.user)));
            }
            reset[c.user] = Some((t - c.gen_time) as u64);
        }
        for (a, r) in self.ages.iter_mut().zip(reset) {
            *a = r.unwrap_or(*a + 1);
        }
        self.cumulative += self.ages.iter().sum::<u64>();
        self.slots += 1;
        Ok(())
    }

    pub fn reward(&self) -> f64 {
        reward(&self.ages)
    }
}

/// `-mean(A)`; zero for an empty population.
pub fn reward(ages: &[u64]) -> f64 {
    if ages.is_empty() {
        return 0.0;
    }
    -(ages.iter().sum::<u64>() as f64) / ages.len() as f64
}
