use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::ViolationReference;

/// Bounded FIFO of violation references, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieredQueue {
    entries: VecDeque<ViolationReference>,
    capacity: usize,
}

impl TieredQueue {
    /// # Panics
    ///
    /// Panics if `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        TieredQueue {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &ViolationReference> {
        self.entries.iter()
    }

    pub fn oldest(&self) -> Option<&ViolationReference> {
        self.entries.front()
    }

    /// Appends `v`, removing and returning the oldest entry first if full.
    pub fn push_evicting(&mut self, v: ViolationReference) -> Option<ViolationReference> {
        let evicted = if self.is_full() { self.entries.pop_front() } else { None };
        self.entries.push_back(v);
        evicted
    }

    /// Checks length against capacity and oldest-first ordering.
    pub(crate) fn check(&self) -> Result<(), String> {
        if self.capacity == 0 {
            return Err("queue capacity is zero".into());
        }
        if self.entries.len() > self.capacity {
            return Err(format!(
                "queue holds {} entries but capacity is {}",
                self.entries.len(),
                self.capacity
            ));
        }
        let ordered = self
            .entries
            .iter()
            .zip(self.entries.iter().skip(1))
            .all(|(a, b)| a.created_at < b.created_at);
        if !ordered {
            return Err("queue entries are not in created_at order".into());
        }
        Ok(())
    }
}
