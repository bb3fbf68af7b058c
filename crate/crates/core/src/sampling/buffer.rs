use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{clip, SamplingError};
use crate::power::PerturbationVector;

/// FIFO store of perturbations the model already fits well.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationBuffer {
    items: VecDeque<PerturbationVector>,
    capacity: usize,
    threshold: f64,
}

impl AugmentationBuffer {
    pub fn new(capacity: usize, threshold: f64) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        AugmentationBuffer { items: VecDeque::with_capacity(capacity.min(4096)), capacity, threshold }
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

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &PerturbationVector> {
        self.items.iter()
    }

    /// Insert `u` when `loss` is strictly below the threshold, evicting the
    /// oldest entry at capacity. Returns whether it was inserted.
    pub fn push(&mut self, u: &PerturbationVector, loss: f64) -> bool {
        if !(loss < self.threshold) {
            return false;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(u.clone());
        true
    }

    /// `k` draws with replacement, each jittered by `N(0, sd²)` per
    /// coordinate and clipped to the box.
    pub fn sample_augmented<R: Rng + ?Sized>(
        &self,
        k: usize,
        rng: &mut R,
        sd: f64,
        delta: f64,
    ) -> Result<Vec<PerturbationVector>, SamplingError> {
        if self.items.is_empty() {
            return Err(SamplingError::EmptyBuffer);
        }
        let noise = Normal::new(0.0, sd).map_err(|e| SamplingError::InvalidConfig(e.to_string()))?;
        Ok((0..k)
            .map(|_| {
                let base = &self.items[rng.random_range(0..self.items.len())];
                let jittered = base
                    .0
                    .iter()
                    .map(|&x| if sd > 0.0 { clip(x + noise.sample(rng), delta) } else { x })
                    .collect();
                PerturbationVector(jittered)
            })
            .collect())
    }
}
