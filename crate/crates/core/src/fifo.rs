// SPDX-License-Identifier: Apache-2.0

//! Bounded decoupling queue. A push into a full queue is refused and counted
//! as a producer stall; nothing is ever dropped.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FifoCounters {
    pub pushes: u64,
    pub pops: u64,
    pub stalls: u64,
    pub peak: usize,
}

#[derive(Clone, Debug)]
pub struct ElasticFifo<T> {
    capacity: usize,
    items: VecDeque<T>,
    counters: FifoCounters,
}

impl<T> ElasticFifo<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "fifo capacity must be at least 1");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
            counters: FifoCounters::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.items.len()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Push, or hand the item back when full (the producer stalls this cycle).
    pub fn try_push(&mut self, item: T) -> Result<(), T> {
        if self.is_full() {
            self.counters.stalls += 1;
            return Err(item);
        }
        self.items.push_back(item);
        self.counters.pushes += 1;
        self.counters.peak = self.counters.peak.max(self.items.len());
        Ok(())
    }

    pub fn pop(&mut self) -> Option<T> {
        let item = self.items.pop_front();
        self.counters.pops += item.is_some() as u64;
        item
    }

    pub fn front(&self) -> Option<&T> {
        self.items.front()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn counters(&self) -> FifoCounters {
        self.counters
    }

    /// pushes == pops + occupancy
    pub fn conserves(&self) -> bool {
        self.counters.pushes == self.counters.pops + self.items.len() as u64
    }
}
