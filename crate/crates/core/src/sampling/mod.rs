//! Samplers over the perturbation box `[-Δ, Δ]^d`, the three-stage training
//! schedule, and the augmentation buffer of well-fitted samples.

mod buffer;
mod lhs;
mod sobol;

pub use buffer::AugmentationBuffer;
pub use lhs::{adaptive_lhs_batch, lhs_batch, select_centers, uniform_batch, AdaptiveBatch};
pub use sobol::{sobol_batch, Sobol, MAX_DIM as SOBOL_MAX_DIM};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("dimension {dim} exceeds the supported maximum {max}")]
    UnsupportedDimension { dim: usize, max: usize },
    #[error("adaptive batches need at least 2 points, got {0}")]
    BatchTooSmall(usize),
    #[error("augmentation buffer is empty")]
    EmptyBuffer,
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
}

/// How the spread of local points around adaptive centers is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalNoise {
    /// Standard deviation `local_sd · Δ`.
    Relative,
    /// Standard deviation `local_sd` in p.u.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Half-width of the perturbation box per dimension (p.u.).
    pub delta: f64,
    pub stage_fractions: [f64; 3],
    /// Epochs between refreshes of the adaptive pool.
    pub adapt_update_period: usize,
    pub top_fraction: f64,
    pub local_sd: f64,
    pub local_noise: LocalNoise,
    /// Augmentation noise is `aug_sd_factor · Δ`.
    pub aug_sd_factor: f64,
    pub buffer_capacity: usize,
    pub buffer_loss_threshold: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            delta: 0.1,
            stage_fractions: [0.3, 0.4, 0.3],
            adapt_update_period: 200,
            top_fraction: 0.25,
            local_sd: 0.1,
            local_noise: LocalNoise::Relative,
            aug_sd_factor: 0.15,
            buffer_capacity: 4096,
            buffer_loss_threshold: 5e-3,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let bad = |m: &str| Err(SamplingError::InvalidConfig(m.into()));
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad("delta must be finite and non-negative");
        }
        if self.stage_fractions.iter().any(|f| !(*f >= 0.0)) || (self.stage_fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("stage_fractions must be non-negative and sum to 1");
        }
        if !(self.top_fraction > 0.0 && self.top_fraction < 1.0) {
            return bad("top_fraction must lie in (0, 1)");
        }
        if self.buffer_capacity == 0 || self.adapt_update_period == 0 {
            return bad("buffer_capacity and adapt_update_period must be at least 1");
        }
        if !(self.local_sd >= 0.0 && self.aug_sd_factor >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        Ok(())
    }

    /// Standard deviation of local points around an adaptive center.
    pub fn local_noise_sd(&self) -> f64 {
        match self.local_noise {
            LocalNoise::Relative => self.local_sd * self.delta,
            LocalNoise::Absolute => self.local_sd,
        }
    }

    pub fn aug_sd(&self) -> f64 {
        self.aug_sd_factor * self.delta
    }

    /// First epochs of the refinement and augmentation stages.
    pub fn stage_boundaries(&self, total_epochs: usize) -> (usize, usize) {
        let at = |frac: f64| ((frac * total_epochs as f64) - 1e-9).ceil().max(0.0) as usize;
        let f = self.stage_fractions;
        (at(f[0]), at(f[0] + f[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SobolExplore,
    LhsRefine,
    AdaptiveAugment,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::SobolExplore => "sobol_explore",
            Stage::LhsRefine => "lhs_refine",
            Stage::AdaptiveAugment => "adaptive_augment",
        }
    }

    pub fn from_label(label: &str) -> Option<Stage> {
        [Stage::SobolExplore, Stage::LhsRefine, Stage::AdaptiveAugment].into_iter().find(|s| s.label() == label)
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

pub fn stage_for_epoch(epoch: usize, total_epochs: usize, config: &SamplingConfig) -> Stage {
    let (b1, b2) = config.stage_boundaries(total_epochs);
    if epoch < b1 {
        Stage::SobolExplore
    } else if epoch < b2 {
        Stage::LhsRefine
    } else {
        Stage::AdaptiveAugment
    }
}

/// Clamp every coordinate into `[-delta, delta]`.
pub(crate) fn clip(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}
