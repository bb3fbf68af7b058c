//! Neural-vs-Newton comparison metrics, timing, the sampling ablation and
//! figure-data export.

mod export;

pub use export::{
    export_figure_data, read_comparison_csv, read_trajectory_csv, ComparisonRow, FigureFiles, FigureMeta,
    FigureTrajectoryRow, COMPARISON_COLUMNS, FIGURE_TRAJECTORY_COLUMNS,
};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{evaluate_batch, GradError, LossOptions, PhysicsContext};
use crate::network::{NetworkError, NeuralSolver};
use crate::newton::{solve_newton, NewtonOptions};
use crate::power::{PerturbationVector, StateVector};
use crate::sampling::uniform_batch;
use crate::train::{train, Schedule, TrainError, TrainingConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("model failed: {0}")]
    Model(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Anything that maps a perturbation to a full state.
pub trait StateModel {
    fn predict(&self, u: &PerturbationVector) -> Result<StateVector, EvalError>;

    fn predict_batch(&self, batch: &[PerturbationVector]) -> Result<Vec<StateVector>, EvalError> {
        batch.iter().map(|u| self.predict(u)).collect()
    }
}

impl StateModel for NeuralSolver<'_> {
    fn predict(&self, u: &PerturbationVector) -> Result<StateVector, EvalError> {
        Ok(NeuralSolver::predict(self, u)?)
    }

    fn predict_batch(&self, batch: &[PerturbationVector]) -> Result<Vec<StateVector>, EvalError> {
        Ok(NeuralSolver::predict_batch(self, batch)?)
    }
}

/// Reference model that answers with a converged Newton solution.
pub struct NewtonOracle<'a> {
    pub ctx: &'a PhysicsContext,
    pub options: NewtonOptions,
}

impl StateModel for NewtonOracle<'_> {
    fn predict(&self, u: &PerturbationVector) -> Result<StateVector, EvalError> {
        let out = solve_newton(&self.ctx.case, &self.ctx.ybus, &self.ctx.spec_at(u), &self.options);
        if out.converged {
            Ok(out.state)
        } else {
            Err(EvalError::Model(format!("Newton did not converge: {:?}", out.failure)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusComparison {
    pub bus: i64,
    pub v_nn: f64,
    pub theta_nn_deg: f64,
    pub v_newton: Option<f64>,
    pub theta_newton_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub case: String,
    /// Root-mean-square mismatch of the model's state.
    pub residual_norm: f64,
    pub newton_converged: bool,
    pub newton_iterations: usize,
    pub newton_time_s: f64,
    /// Median wall time of a single warm model prediction.
    pub nn_inference_time_s: f64,
    /// Difference metrics; absent when Newton failed.
    pub dv_max: Option<f64>,
    pub dv_mean: Option<f64>,
    pub dtheta_max_deg: Option<f64>,
    pub dtheta_mean_deg: Option<f64>,
    pub buses: Vec<BusComparison>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub newton: NewtonOptions,
    pub timing_repeats: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { newton: NewtonOptions::default(), timing_repeats: 100 }
    }
}

/// Wrap an angle difference in degrees into `(-180, 180]`.
pub fn wrap_degrees(d: f64) -> f64 {
    let w = d.rem_euclid(360.0);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Compare a model against Newton at perturbation `u`.
pub fn evaluate(
    model: &dyn StateModel,
    ctx: &PhysicsContext,
    u: &PerturbationVector,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let case = &ctx.case;
    let spec = ctx.spec_at(u);
    let state = model.predict(u)?;
    let residual_norm = ctx.mismatch(&state, &spec).norm();

    let mut times: Vec<f64> = (0..opts.timing_repeats)
        .map(|_| {
            let t = Instant::now();
            let _ = model.predict(u);
            t.elapsed().as_secs_f64()
        })
        .collect();
    let nn_inference_time_s = if times.is_empty() { 0.0 } else { median(&mut times) };

    let t = Instant::now();
    let newton = solve_newton(case, &ctx.ybus, &spec, &opts.newton);
    let newton_time_s = t.elapsed().as_secs_f64();

    let slack = case.bus_sets.slack;
    let nn_ref = state.va[slack];
    let mut buses = Vec::with_capacity(case.n_buses());
    let (mut dv_max, mut dv_sum, mut dt_max, mut dt_sum) = (0.0f64, 0.0, 0.0f64, 0.0);
    for (i, bus) in case.buses.iter().enumerate() {
        let theta_nn = (state.va[i] - nn_ref).to_degrees();
        let (v_newton, theta_newton) = if newton.converged {
            let t_ref = newton.state.va[slack];
            (Some(newton.state.vm[i]), Some((newton.state.va[i] - t_ref).to_degrees()))
        } else {
            (None, None)
        };
        if let (Some(vn), Some(tn)) = (v_newton, theta_newton) {
            let dv = (state.vm[i] - vn).abs();
            let dt = wrap_degrees(theta_nn - tn).abs();
            dv_max = dv_max.max(dv);
            dt_max = dt_max.max(dt);
            dv_sum += dv;
            dt_sum += dt;
        }
        buses.push(BusComparison {
            bus: bus.id,
            v_nn: state.vm[i],
            theta_nn_deg: theta_nn,
            v_newton,
            theta_newton_deg: theta_newton,
        });
    }
    let n = case.n_buses() as f64;
    let ok = newton.converged;
    Ok(EvalReport {
        case: case.name.clone(),
        residual_norm,
        newton_converged: ok,
        newton_iterations: newton.iterations,
        newton_time_s,
        nn_inference_time_s,
        dv_max: ok.then_some(dv_max),
        dv_mean: ok.then_some(dv_sum / n),
        dtheta_max_deg: ok.then_some(dt_max),
        dtheta_mean_deg: ok.then_some(dt_sum / n),
        buses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenarios: usize,
    /// Wall time of one batched model prediction over all scenarios.
    pub nn_batch_s: f64,
    /// Wall time of solving every scenario with Newton, one after another.
    pub newton_sequential_s: f64,
    /// `newton_sequential_s / nn_batch_s`; absent when either is zero.
    pub speedup: Option<f64>,
    pub newton_failures: usize,
}

pub fn batch_benchmark(
    model: &dyn StateModel,
    ctx: &PhysicsContext,
    scenarios: &[PerturbationVector],
    newton: &NewtonOptions,
) -> Result<BenchmarkReport, EvalError> {
    if scenarios.is_empty() {
        return Ok(BenchmarkReport {
            scenarios: 0,
            nn_batch_s: 0.0,
            newton_sequential_s: 0.0,
            speedup: None,
            newton_failures: 0,
        });
    }
    let t = Instant::now();
    let states = model.predict_batch(scenarios)?;
    let nn_batch_s = t.elapsed().as_secs_f64();
    debug_assert_eq!(states.len(), scenarios.len());

    let t = Instant::now();
    let newton_failures = scenarios
        .iter()
        .filter(|u| !solve_newton(&ctx.case, &ctx.ybus, &ctx.spec_at(u), newton).converged)
        .count();
    let newton_sequential_s = t.elapsed().as_secs_f64();
    let speedup = (nn_batch_s > 0.0 && newton_sequential_s > 0.0).then(|| newton_sequential_s / nn_batch_s);
    Ok(BenchmarkReport { scenarios: scenarios.len(), nn_batch_s, newton_sequential_s, speedup, newton_failures })
}

/// Seed of the shared held-out set used to score every ablation run.
pub const ABLATION_EVAL_SEED: u64 = 0x5eed_e7a1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub schedule: Schedule,
    pub seed: u64,
    /// Mean squared residual on the held-out set.
    pub final_loss: f64,
    /// Mean per-sample residual norm on the held-out set.
    pub residual_norm: f64,
    pub probe_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub schedule: Schedule,
    pub median_final_loss: f64,
    pub median_residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub eval_points: usize,
    pub runs: Vec<AblationRun>,
    pub summary: Vec<AblationSummary>,
}

impl AblationReport {
    pub fn median_loss(&self, schedule: Schedule) -> Option<f64> {
        self.summary.iter().find(|s| s.schedule == schedule).map(|s| s.median_final_loss)
    }
}

/// Train once per (schedule, seed) and score every run on one i.i.d.-uniform held-out set.
pub fn ablation_sampling(
    ctx: &PhysicsContext,
    config: &TrainingConfig,
    schedules: &[Schedule],
    seeds: &[u64],
    eval_points: usize,
) -> Result<AblationReport, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(ABLATION_EVAL_SEED);
    let held_out = uniform_batch(ctx.input_dim(), eval_points.max(1), &mut rng, config.sampling.delta);
    let opts = LossOptions { p_weight: config.p_weight, ..Default::default() };
    let mut runs = Vec::new();
    for &schedule in schedules {
        for &seed in seeds {
            let cfg = TrainingConfig { schedule, seed, ..config.clone() };
            let out = train(ctx, &cfg)?;
            let (loss, stats) = evaluate_batch(&out.params, &held_out, ctx, &opts)?;
            let residual_norm = stats.residual_norm.iter().sum::<f64>() / stats.residual_norm.len() as f64;
            runs.push(AblationRun { schedule, seed, final_loss: loss, residual_norm, probe_loss: out.final_probe_loss });
        }
    }
    let summary = schedules
        .iter()
        .map(|&schedule| {
            let mut losses: Vec<f64> = runs.iter().filter(|r| r.schedule == schedule).map(|r| r.final_loss).collect();
            let mut norms: Vec<f64> = runs.iter().filter(|r| r.schedule == schedule).map(|r| r.residual_norm).collect();
            AblationSummary { schedule, median_final_loss: median(&mut losses), median_residual_norm: median(&mut norms) }
        })
        .collect();
    Ok(AblationReport { eval_points: held_out.len(), runs, summary })
}
