//! Unsupervised training: batches come from the staged samplers, the loss is
//! the physics residual, and updates use AdamW under a cosine × plateau
//! learning-rate schedule.

mod log;
mod optim;

pub use log::{TrajectoryLog, TrajectoryRecord, TRAJECTORY_COLUMNS};
pub use optim::{clip_gradients, cosine_lr, global_norm, AdamW, Plateau, ADAM_EPS, BETA1, BETA2};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{evaluate_batch, loss_and_gradient, BatchStats, GradError, LossOptions, PhysicsContext};
use crate::network::{auto_config, init_network, ArchOverrides, ArchitectureSpec, NetworkError, NetworkParams};
use crate::power::PerturbationVector;
use crate::sampling::{
    adaptive_lhs_batch, lhs_batch, sobol_batch, stage_for_epoch, uniform_batch, AugmentationBuffer, SamplingConfig,
    SamplingError, Stage,
};

/// Where training batches come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Sobol, then LHS, then residual-guided LHS with buffer augmentation.
    ThreeStage,
    LhsOnly,
    /// I.i.d. uniform draws every epoch.
    RandomUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub weight_decay: f64,
    pub lr_min: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_rel_eps: f64,
    pub clip_max_norm: f64,
    /// Residual noise applied in the adaptive stage only.
    pub smoothing_sd: f64,
    pub p_weight: f64,
    pub schedule: Schedule,
    pub seed: u64,
    /// Log every `log_period` epochs, plus the first, last and stage-boundary epochs.
    pub log_period: usize,
    /// Probe batch size for energy and mean-residual logging.
    pub probe_size: usize,
    /// Adaptive pool size as a multiple of the batch size.
    pub pool_factor: usize,
    /// Share of each adaptive-stage batch drawn from the buffer once it is non-empty.
    pub buffer_fraction: f64,
    /// Checkpoint callback period in epochs; 0 disables periodic checkpoints.
    pub checkpoint_period: usize,
    pub sampling: SamplingConfig,
    pub architecture: ArchOverrides,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 2000,
            batch_size: 64,
            lr_init: 5e-4,
            weight_decay: 1e-4,
            lr_min: 1e-6,
            plateau_factor: 0.5,
            plateau_patience: 500,
            plateau_rel_eps: 1e-4,
            clip_max_norm: 1.0,
            smoothing_sd: 5e-4,
            p_weight: 1.0,
            schedule: Schedule::ThreeStage,
            seed: 0,
            log_period: 10,
            probe_size: 64,
            pool_factor: 8,
            buffer_fraction: 0.5,
            checkpoint_period: 0,
            sampling: SamplingConfig::default(),
            architecture: ArchOverrides::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("training diverged at epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        #[source]
        source: GradError,
        /// Parameters before the failing update.
        last_good: Box<NetworkParams>,
        log: TrajectoryLog,
    },
    #[error(transparent)]
    Grad(GradError),
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1");
        }
        if !(self.lr_init > self.lr_min && self.lr_min > 0.0) {
            return bad("need lr_init > lr_min > 0");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad("plateau_factor must lie in (0, 1]");
        }
        if !(self.clip_max_norm > 0.0) || self.weight_decay < 0.0 || self.smoothing_sd < 0.0 || !(self.p_weight > 0.0) {
            return bad("clip_max_norm and p_weight must be positive; weight_decay and smoothing_sd non-negative");
        }
        if self.log_period == 0 || self.probe_size == 0 || self.pool_factor == 0 {
            return bad("log_period, probe_size and pool_factor must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.buffer_fraction) {
            return bad("buffer_fraction must lie in [0, 1]");
        }
        self.sampling.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        crate::config_digest(self)
    }
}

/// Fixed probe points used to track energy across epochs.
pub fn probe_batch(dim: usize, size: usize, delta: f64) -> Result<Vec<PerturbationVector>, SamplingError> {
    sobol_batch(dim, size, 0, delta)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: TrajectoryLog,
    /// Noise-free probe loss before the first update.
    pub initial_probe_loss: f64,
    /// Noise-free probe loss with the final parameters.
    pub final_probe_loss: f64,
    pub final_probe_stats: BatchStats,
    pub buffer_size: usize,
    pub steps: usize,
}

/// Learning rate and clipping diagnostics of a single update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub epoch: usize,
    pub stage: Stage,
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
    pub loss: f64,
}

/// Observer for periodic checkpoints and per-step diagnostics.
pub trait TrainObserver {
    fn on_step(&mut self, _info: &StepInfo) {}
    fn on_checkpoint(&mut self, _epoch: usize, _params: &NetworkParams) {}
}

impl TrainObserver for () {}

const STREAM_BATCHES: u64 = 1;
const STREAM_NOISE: u64 = 2;

pub fn train(ctx: &PhysicsContext, config: &TrainingConfig) -> Result<TrainOutcome, TrainError> {
    let arch = auto_config(&ctx.case.bus_sets, &config.architecture)?;
    train_with(ctx, &arch, config, &mut ())
}

pub fn train_with(
    ctx: &PhysicsContext,
    arch: &ArchitectureSpec,
    config: &TrainingConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let dim = ctx.input_dim();
    let sc = &config.sampling;
    let delta = sc.delta;
    let batch_size = config.batch_size;
    let (b1, b2) = sc.stage_boundaries(config.epochs);

    let mut params = init_network(arch, config.seed);
    let mut opt = AdamW::new(&params);
    let mut plateau = Plateau::new(
        config.plateau_patience,
        config.plateau_factor,
        config.lr_min / config.lr_init,
        config.plateau_rel_eps,
    );
    let mut buffer = AugmentationBuffer::new(sc.buffer_capacity, sc.buffer_loss_threshold);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    batch_rng.set_stream(STREAM_BATCHES);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(STREAM_NOISE);

    let clean = LossOptions { p_weight: config.p_weight, ..Default::default() };
    let probe = probe_batch(dim, config.probe_size, delta)?;
    let probe_eval = |p: &NetworkParams| evaluate_batch(p, &probe, ctx, &clean).map_err(TrainError::Grad);
    let (initial_probe_loss, _) = probe_eval(&params)?;

    let mut log = TrajectoryLog::default();
    let mut sobol_offset = 0u64;
    let mut pool: Vec<PerturbationVector> = Vec::new();

    for epoch in 0..config.epochs {
        let stage = stage_for_epoch(epoch, config.epochs, sc);
        let batch = match config.schedule {
            Schedule::ThreeStage => match stage {
                Stage::SobolExplore => {
                    let b = sobol_batch(dim, batch_size, sobol_offset, delta)?;
                    sobol_offset += batch_size as u64;
                    b
                }
                Stage::LhsRefine => lhs_batch(dim, batch_size, &mut batch_rng, delta),
                Stage::AdaptiveAugment => {
                    if (epoch - b2) % sc.adapt_update_period == 0 || pool.is_empty() {
                        let pool_size = (config.pool_factor * batch_size).max(2);
                        let scorer = |pts: &[PerturbationVector]| {
                            evaluate_batch(&params, pts, ctx, &clean)
                                .map(|(_, s)| s.residual_norm)
                                .unwrap_or_else(|_| vec![f64::INFINITY; pts.len()])
                        };
                        pool = adaptive_lhs_batch(scorer, dim, pool_size, &mut batch_rng, sc)?.points;
                    }
                    let from_buffer =
                        if buffer.is_empty() { 0 } else { (config.buffer_fraction * batch_size as f64) as usize };
                    let mut b = buffer.sample_augmented(from_buffer, &mut batch_rng, sc.aug_sd(), delta).unwrap_or_default();
                    let rest = batch_size - b.len();
                    let picks = sample(&mut batch_rng, pool.len(), rest.min(pool.len()));
                    b.extend(picks.into_iter().map(|i| pool[i].clone()));
                    b
                }
            },
            Schedule::LhsOnly => lhs_batch(dim, batch_size, &mut batch_rng, delta),
            Schedule::RandomUniform => uniform_batch(dim, batch_size, &mut batch_rng, delta),
        };

        let opts = LossOptions {
            smoothing_sd: if stage == Stage::AdaptiveAugment { config.smoothing_sd } else { 0.0 },
            noise_seed: noise_rng.random(),
            p_weight: config.p_weight,
        };
        let bundle = match loss_and_gradient(&params, &batch, ctx, &opts) {
            Ok(b) => b,
            Err(source) => {
                return Err(TrainError::Diverged { epoch, source, last_good: Box::new(params), log });
            }
        };

        let is_logged = epoch % config.log_period == 0 || epoch + 1 == config.epochs || epoch == b1 || epoch == b2;
        if is_logged {
            let (probe_loss, stats) = probe_eval(&params)?;
            log.push(TrajectoryRecord {
                epoch,
                stage,
                loss: bundle.loss,
                lr: cosine_lr(epoch, config.epochs, config.lr_init, config.lr_min) * plateau.factor,
                mean_dp: stats.mean_abs_dp,
                mean_dq: stats.mean_abs_dq,
                energy: 0.5 * probe_loss,
                buffer_size: buffer.len(),
            });
        }

        let lr = cosine_lr(epoch, config.epochs, config.lr_init, config.lr_min) * plateau.factor;
        let loss = bundle.loss;
        let mut grads = bundle.grads;
        let grad_norm = clip_gradients(&mut grads, config.clip_max_norm);
        opt.step(&mut params, &grads, lr, config.weight_decay);
        observer.on_step(&StepInfo { epoch, stage, lr, grad_norm, clipped_norm: global_norm(&grads), loss });

        for (u, &l) in batch.iter().zip(&bundle.stats.sample_loss) {
            buffer.push(u, l);
        }
        plateau.update(loss);

        if config.checkpoint_period > 0 && (epoch + 1) % config.checkpoint_period == 0 {
            observer.on_checkpoint(epoch + 1, &params);
        }
    }

    let (final_probe_loss, final_probe_stats) = probe_eval(&params)?;
    if !final_probe_loss.is_finite() {
        return Err(TrainError::Diverged {
            epoch: config.epochs,
            source: GradError::NonFiniteLoss,
            last_good: Box::new(params),
            log,
        });
    }
    Ok(TrainOutcome {
        params,
        log,
        initial_probe_loss,
        final_probe_loss,
        final_probe_stats,
        buffer_size: buffer.len(),
        steps: opt.step as usize,
    })
}
