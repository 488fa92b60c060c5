//! Per-device atom caches with first-in-first-out release.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atoms resident on one device, oldest first. Pinned atoms (the ones the
/// current scheme places here) are released only after every unpinned
/// resident has gone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomCache {
    capacity: u64,
    residents: VecDeque<(usize, u64)>,
}

impl AtomCache {
    pub fn new(capacity: u64) -> Self {
        AtomCache { capacity, residents: VecDeque::new() }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used_bytes(&self) -> u64 {
        self.residents.iter().map(|r| r.1).sum()
    }

    pub fn contains(&self, atom: usize) -> bool {
        self.residents.iter().any(|r| r.0 == atom)
    }

    /// Resident atom ids in insertion order.
    pub fn residents(&self) -> Vec<usize> {
        self.residents.iter().map(|r| r.0).collect()
    }

    pub fn clear(&mut self) -> Vec<usize> {
        self.residents.drain(..).map(|r| r.0).collect()
    }

    fn evict_to(&mut self, capacity: u64, pinned: &dyn Fn(usize) -> bool) -> Vec<usize> {
        let mut evicted = Vec::new();
        for pass_pinned in [false, true] {
            let mut i = 0;
            while self.used_bytes() > capacity && i < self.residents.len() {
                if pinned(self.residents[i].0) == pass_pinned {
                    evicted.push(self.residents.remove(i).expect("index in range").0);
                } else {
                    i += 1;
                }
            }
        }
        evicted
    }

    /// Inserts `atom` and releases the oldest residents until the cache fits
    /// again, returning them in release order. A resident atom is left where
    /// it is.
    pub fn admit(&mut self, atom: usize, bytes: u64, pinned: &dyn Fn(usize) -> bool) -> Result<Vec<usize>> {
        if self.contains(atom) {
            return Ok(Vec::new());
        }
        if bytes > self.capacity {
            return Err(Error::CannotFit { atom, bytes, capacity: self.capacity });
        }
        self.residents.push_back((atom, bytes));
        let keep = |a: usize| a == atom || pinned(a);
        let evicted = self.evict_to(self.capacity, &keep);
        debug_assert!(!evicted.contains(&atom));
        Ok(evicted)
    }

    /// Changes the capacity, releasing residents that no longer fit.
    pub fn resize(&mut self, capacity: u64, pinned: &dyn Fn(usize) -> bool) -> Vec<usize> {
        self.capacity = capacity;
        self.evict_to(capacity, pinned)
    }
}
