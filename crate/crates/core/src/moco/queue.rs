use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::{Real, Rng};

/// Unit-norm tolerance accepted by [`MemoryQueue::enqueue`].
pub const NORM_TOLERANCE: f64 = 1e-4;

/// Where a queued key came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeySource {
    /// Random unit vector placed at initialization.
    Init,
    Hr,
    Lr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry<T> {
    pub key: Vec<T>,
    pub source: KeySource,
    /// Monotone insertion counter.
    pub serial: u64,
}

/// Fixed-capacity FIFO of unit-norm keys; the oldest entry is evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryQueue<T> {
    capacity: usize,
    dim: usize,
    entries: VecDeque<QueueEntry<T>>,
    next_serial: u64,
}

impl<T: Real> MemoryQueue<T> {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Invalid(format!("queue needs positive capacity and dim, got {capacity}×{dim}")));
        }
        Ok(MemoryQueue { capacity, dim, entries: VecDeque::with_capacity(capacity), next_serial: 0 })
    }

    /// A full queue of random unit vectors.
    pub fn random(capacity: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let mut q = Self::new(capacity, dim)?;
        let keys: Vec<Vec<T>> = (0..capacity).map(|_| rng.unit_vector(dim)).collect();
        q.enqueue(&keys, KeySource::Init)?;
        Ok(q)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &QueueEntry<T>> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl ExactSizeIterator<Item = &[T]> {
        self.entries.iter().map(|e| e.key.as_slice())
    }

    /// Appends `keys` in order, evicting the oldest entries past capacity.
    /// The whole batch is validated before anything is inserted.
    pub fn enqueue(&mut self, keys: &[Vec<T>], source: KeySource) -> Result<()> {
        for (index, k) in keys.iter().enumerate() {
            if k.len() != self.dim {
                return Err(Error::Shape(format!("key {index} has dim {}, queue holds {}", k.len(), self.dim)));
            }
            let norm = k.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NotNormalized { index, norm });
            }
        }
        for k in keys {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(QueueEntry { key: k.clone(), source, serial: self.next_serial });
            self.next_serial += 1;
        }
        Ok(())
    }

    /// Reorders entries with `perm` (`new[i] = old[perm[i]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        out.entries = perm.iter().map(|&i| self.entries[i].clone()).collect();
        out
    }
}
