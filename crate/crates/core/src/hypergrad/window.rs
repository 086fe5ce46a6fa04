use std::collections::VecDeque;

use crate::error::{invalid, Result};
use crate::linalg::{check_dim, mean_with_divisor, Vector};

/// The `w` most recent hypergradient estimates. The average always divides
/// by `w`, so rounds before the first one count as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBuffer {
    capacity: usize,
    dim: usize,
    entries: VecDeque<Vector>,
}

impl WindowBuffer {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("window length must be at least 1"));
        }
        Ok(Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
        })
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

    /// Stores `estimate`, evicting the oldest entry when full.
    pub fn push(&mut self, estimate: Vector) -> Result<()> {
        check_dim("window entry", &estimate, self.dim)?;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(estimate);
        Ok(())
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &Vector> {
        self.entries.iter()
    }

    pub fn average(&self) -> Vector {
        mean_with_divisor(self.entries.iter(), self.capacity, self.dim)
    }
}
