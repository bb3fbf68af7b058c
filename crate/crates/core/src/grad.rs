//! Physics loss and its exact gradient with respect to network parameters.
//!
//! The pipeline is fixed (MLP → decode → complex power → residual), so the
//! backward pass is hand-derived: the residual adjoint is pushed through the
//! complex power equations with [`injection_adjoint`], then through the
//! decode transforms, then through the MLP layers.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::network::{decode, sigmoid, stack_inputs, ForwardCache, NetworkError, NetworkParams};
use crate::power::{injection_adjoint, residual_from_calc, PerturbationVector, PowerInjection, PowerSystem};

/// Case, admittance matrix and base injections shared by every loss evaluation.
pub type PhysicsContext = PowerSystem;

#[derive(Debug, Error, PartialEq)]
pub enum GradError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Loss settings. Smoothing noise is drawn per call from `noise_seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    /// Standard deviation of Gaussian noise added to residuals before squaring.
    pub smoothing_sd: f64,
    pub noise_seed: u64,
    /// Weight on the active-power terms; reactive terms always have weight 1.
    pub p_weight: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions { smoothing_sd: 0.0, noise_seed: 0, p_weight: 1.0 }
    }
}

/// Gradient tensors mirroring the parameter shapes, plus the loss.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub loss: f64,
    pub grads: NetworkParams,
    pub stats: BatchStats,
}

impl GradientBundle {
    pub fn global_norm(&self) -> f64 {
        self.grads.flatten().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Noise-free per-sample diagnostics gathered during a loss evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchStats {
    /// `Σ dP² + Σ dQ²` per sample, without smoothing noise or weighting.
    pub sample_loss: Vec<f64>,
    /// Root-mean-square residual per sample.
    pub residual_norm: Vec<f64>,
    /// Mean |dP| over samples and buses.
    pub mean_abs_dp: f64,
    pub mean_abs_dq: f64,
}

struct SampleOutcome {
    loss: f64,
    clean_loss: f64,
    residual_norm: f64,
    sum_abs_dp: f64,
    sum_abs_dq: f64,
    dz: Vec<f64>,
}

/// Physics evaluation and backward step through decode for one sample.
fn sample_pass(
    raw: ArrayView1<f64>,
    u: &PerturbationVector,
    params: &NetworkParams,
    ctx: &PhysicsContext,
    opts: &LossOptions,
    index: usize,
    want_grad: bool,
) -> SampleOutcome {
    let case = &ctx.case;
    let sets = &case.bus_sets;
    let spec = &params.spec;
    let state = decode(raw, spec, case);
    let v = state.complex_voltages();
    let current = ctx.ybus.y.mul_vec(&v);
    let (p, q) = v
        .iter()
        .zip(&current)
        .map(|(vi, ii)| {
            let s = vi * ii.conj();
            (s.re, s.im)
        })
        .unzip();
    let calc = PowerInjection { p, q };
    let target = ctx.spec_at(u);
    let res = residual_from_calc(&calc, &target, case);

    let mut rp = res.dp.clone();
    let mut rq = res.dq.clone();
    if opts.smoothing_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.noise_seed);
        rng.set_stream(index as u64);
        let noise = Normal::new(0.0, opts.smoothing_sd).expect("valid sd");
        for r in rp.iter_mut().chain(rq.iter_mut()) {
            *r += noise.sample(&mut rng);
        }
    }
    let loss = opts.p_weight * rp.iter().map(|r| r * r).sum::<f64>() + rq.iter().map(|r| r * r).sum::<f64>();
    let clean_loss = res.dp.iter().chain(&res.dq).map(|r| r * r).sum::<f64>();
    let mut outcome = SampleOutcome {
        loss,
        clean_loss,
        residual_norm: res.norm(),
        sum_abs_dp: res.dp.iter().map(|r| r.abs()).sum(),
        sum_abs_dq: res.dq.iter().map(|r| r.abs()).sum(),
        dz: Vec::new(),
    };
    if !want_grad {
        return outcome;
    }

    // Residual = target - calc, so ∂ℓ/∂calc = -2·weight·residual.
    let n = case.n_buses();
    let mut dl_dp = vec![0.0; n];
    let mut dl_dq = vec![0.0; n];
    for (&i, &r) in res.p_buses.iter().zip(&rp) {
        dl_dp[i] = -2.0 * opts.p_weight * r;
    }
    for (&j, &r) in res.q_buses.iter().zip(&rq) {
        dl_dq[j] = -2.0 * r;
    }
    let (d_vm, d_va) = injection_adjoint(&v, &current, &ctx.ybus, &dl_dp, &dl_dq);

    let mut dz = vec![0.0; spec.d_out];
    let dtheta = |z: f64| {
        let t = z.tanh();
        spec.theta_scale * (1.0 - t * t)
    };
    for (k, &i) in sets.pv.iter().enumerate() {
        dz[k] = d_va[i] * dtheta(raw[k]);
    }
    for (k, &j) in sets.pq.iter().enumerate() {
        let base = sets.pv.len() + 2 * k;
        dz[base] = d_vm[j] * sigmoid(raw[base]);
        dz[base + 1] = d_va[j] * dtheta(raw[base + 1]);
    }
    outcome.dz = dz;
    outcome
}

fn run_batch(
    params: &NetworkParams,
    batch: &[PerturbationVector],
    ctx: &PhysicsContext,
    opts: &LossOptions,
    want_grad: bool,
) -> Result<(ForwardCache, Vec<SampleOutcome>), GradError> {
    if batch.is_empty() {
        return Err(GradError::EmptyBatch);
    }
    let inputs = stack_inputs(batch, params.spec.d_in);
    if batch.iter().any(|u| u.0.len() != params.spec.d_in) {
        return Err(NetworkError::Dimension { expected: params.spec.d_in, got: inputs.ncols() }.into());
    }
    let cache = params.forward_cached(&inputs)?;
    // Ordered collect keeps the later reductions independent of thread count.
    let outcomes: Vec<SampleOutcome> = (0..batch.len())
        .into_par_iter()
        .map(|b| sample_pass(cache.output.row(b), &batch[b], params, ctx, opts, b, want_grad))
        .collect();
    Ok((cache, outcomes))
}

fn summarize(outcomes: &[SampleOutcome], ctx: &PhysicsContext) -> (f64, BatchStats) {
    let count = outcomes.len() as f64;
    let loss = outcomes.iter().map(|o| o.loss).sum::<f64>() / count;
    let sets = &ctx.case.bus_sets;
    let n_p = (sets.pv.len() + sets.pq.len()).max(1) as f64;
    let n_q = sets.pq.len().max(1) as f64;
    let stats = BatchStats {
        sample_loss: outcomes.iter().map(|o| o.clean_loss).collect(),
        residual_norm: outcomes.iter().map(|o| o.residual_norm).collect(),
        mean_abs_dp: outcomes.iter().map(|o| o.sum_abs_dp).sum::<f64>() / (count * n_p),
        mean_abs_dq: outcomes.iter().map(|o| o.sum_abs_dq).sum::<f64>() / (count * n_q),
    };
    (loss, stats)
}

/// Batch-mean of the weighted squared residuals.
pub fn loss(
    params: &NetworkParams,
    batch: &[PerturbationVector],
    ctx: &PhysicsContext,
    opts: &LossOptions,
) -> Result<f64, GradError> {
    Ok(evaluate_batch(params, batch, ctx, opts)?.0)
}

/// Loss and diagnostics without a backward pass.
pub fn evaluate_batch(
    params: &NetworkParams,
    batch: &[PerturbationVector],
    ctx: &PhysicsContext,
    opts: &LossOptions,
) -> Result<(f64, BatchStats), GradError> {
    let (_, outcomes) = run_batch(params, batch, ctx, opts, false)?;
    Ok(summarize(&outcomes, ctx))
}

pub fn loss_and_gradient(
    params: &NetworkParams,
    batch: &[PerturbationVector],
    ctx: &PhysicsContext,
    opts: &LossOptions,
) -> Result<GradientBundle, GradError> {
    let (cache, outcomes) = run_batch(params, batch, ctx, opts, true)?;
    let (loss, stats) = summarize(&outcomes, ctx);
    if !loss.is_finite() {
        return Err(GradError::NonFiniteLoss);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut d_out = Array2::zeros((batch.len(), params.spec.d_out));
    for (mut row, o) in d_out.axis_iter_mut(Axis(0)).zip(&outcomes) {
        row.assign(&ArrayView1::from(&o.dz[..]));
    }
    d_out *= scale;
    let grads = backprop(params, &cache, d_out);
    for (k, layer) in grads.layers.iter().enumerate() {
        if layer.tensors().iter().any(|t| t.iter().any(|g| !g.is_finite())) {
            return Err(GradError::NonFiniteGradient { layer: k });
        }
    }
    Ok(GradientBundle { loss, grads, stats })
}

/// Reverse pass through the MLP given `∂L/∂z` at the raw output.
pub fn backprop(params: &NetworkParams, cache: &ForwardCache, d_out: Array2<f64>) -> NetworkParams {
    let mut grads = params.zeros_like();
    let mut delta = d_out;
    for k in (0..params.layers.len()).rev() {
        let layer = &params.layers[k];
        let g = &mut grads.layers[k];
        g.weight.assign(&delta.t().dot(&cache.layer_inputs[k]));
        g.bias.assign(&delta.sum_axis(Axis(0)));
        if k == 0 {
            break;
        }
        let mut d_act = delta.dot(&layer.weight);
        // Undo the previous hidden layer: optional normalization, then tanh.
        let h = k - 1;
        if let (Some(norm), Some(xhat), Some(istd)) =
            (&params.layers[h].norm, &cache.normalized[h], &cache.inv_std[h])
        {
            let gn = grads.layers[h].norm.as_mut().expect("mirrors params");
            gn.gain.assign(&(&d_act * xhat).sum_axis(Axis(0)));
            gn.offset.assign(&d_act.sum_axis(Axis(0)));
            let dxhat = &d_act * &norm.gain;
            d_act = layernorm_backward(&dxhat, xhat, istd);
        }
        let a = &cache.activations[h];
        delta = &d_act * &a.mapv(|t| 1.0 - t * t);
    }
    grads
}

fn layernorm_backward(dxhat: &Array2<f64>, xhat: &Array2<f64>, istd: &Array1<f64>) -> Array2<f64> {
    let mut out = dxhat.clone();
    for ((mut row, xh), &s) in out.axis_iter_mut(Axis(0)).zip(xhat.axis_iter(Axis(0))).zip(istd) {
        let m1 = row.mean().unwrap_or(0.0);
        let m2 = row.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>() / xh.len() as f64;
        row.zip_mut_with(&xh, |d, &x| *d = s * (*d - m1 - x * m2));
    }
    out
}

/// Outcome of comparing the analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDifferenceReport {
    pub max_rel_error: f64,
    /// Flat parameter index with the largest error.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub indices: Vec<usize>,
}

/// Below this magnitude on both sides the absolute difference is reported.
pub const FD_ABS_GUARD: f64 = 1e-12;

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < FD_ABS_GUARD {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Compare the analytic gradient on `sample_count` randomly chosen parameters
/// (without replacement) against `(L(θ+h) − L(θ−h)) / 2h`.
pub fn finite_difference_check(
    params: &NetworkParams,
    batch: &[PerturbationVector],
    ctx: &PhysicsContext,
    h: f64,
    sample_count: usize,
    seed: u64,
) -> Result<FiniteDifferenceReport, GradError> {
    let opts = LossOptions::default();
    let analytic_all = loss_and_gradient(params, batch, ctx, &opts)?.grads.flatten();
    let base = params.flatten();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = sample(&mut rng, base.len(), sample_count.min(base.len())).into_vec();
    indices.sort_unstable();

    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut numeric = Vec::with_capacity(indices.len());
    for &i in &indices {
        flat[i] = base[i] + h;
        probe.assign_flat(&flat)?;
        let plus = loss(&probe, batch, ctx, &opts)?;
        flat[i] = base[i] - h;
        probe.assign_flat(&flat)?;
        let minus = loss(&probe, batch, ctx, &opts)?;
        flat[i] = base[i];
        numeric.push((plus - minus) / (2.0 * h));
    }
    let analytic: Vec<f64> = indices.iter().map(|&i| analytic_all[i]).collect();
    let (worst, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |acc, (k, e)| if e > acc.1 { (k, e) } else { acc });
    Ok(FiniteDifferenceReport {
        max_rel_error,
        worst_index: indices.get(worst).copied().unwrap_or(0),
        analytic,
        numeric,
        indices,
    })
}
