use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{clip, SamplingConfig, SamplingError};
use crate::power::PerturbationVector;

/// Latin hypercube: in every dimension each of the `n` equal strata of
/// `[-delta, delta]` holds exactly one point.
pub fn lhs_batch<R: Rng + ?Sized>(dim: usize, n: usize, rng: &mut R, delta: f64) -> Vec<PerturbationVector> {
    let mut points = vec![vec![0.0; dim]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        strata.shuffle(rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            let unit = (s as f64 + rng.random::<f64>()) / n as f64;
            p[d] = clip(delta * (2.0 * unit - 1.0), delta);
        }
    }
    points.into_iter().map(PerturbationVector).collect()
}

/// I.i.d. uniform points in the box.
pub fn uniform_batch<R: Rng + ?Sized>(dim: usize, n: usize, rng: &mut R, delta: f64) -> Vec<PerturbationVector> {
    (0..n)
        .map(|_| PerturbationVector((0..dim).map(|_| delta * (2.0 * rng.random::<f64>() - 1.0)).collect()))
        .collect()
}

/// Indices of the `count` largest scores, largest first; ties keep the lower index first.
pub fn select_centers(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(count);
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveBatch {
    /// Initial LHS points followed by the local points.
    pub points: Vec<PerturbationVector>,
    /// Uncertainty score of each initial point.
    pub scores: Vec<f64>,
    /// Indices (into the initial points) used as centers, in selection order.
    pub centers: Vec<usize>,
}

impl AdaptiveBatch {
    pub fn n_initial(&self) -> usize {
        self.scores.len()
    }
}

/// Residual-guided LHS: half the points are plain LHS, the rest are drawn
/// around the initial points with the highest uncertainty score.
///
/// `evaluator` maps a set of points to one score per point.
pub fn adaptive_lhs_batch<R, F>(
    evaluator: F,
    dim: usize,
    n: usize,
    rng: &mut R,
    config: &SamplingConfig,
) -> Result<AdaptiveBatch, SamplingError>
where
    R: Rng + ?Sized,
    F: FnOnce(&[PerturbationVector]) -> Vec<f64>,
{
    if n < 2 {
        return Err(SamplingError::BatchTooSmall(n));
    }
    let delta = config.delta;
    let n_init = n.div_ceil(2);
    let mut points = lhs_batch(dim, n_init, rng, delta);
    let scores = evaluator(&points);
    assert_eq!(scores.len(), n_init, "evaluator must score every point");
    let n_centers = ((config.top_fraction * n_init as f64).ceil() as usize).clamp(1, n_init);
    let centers = select_centers(&scores, n_centers);

    let sd = config.local_noise_sd();
    let noise = Normal::new(0.0, sd).map_err(|e| SamplingError::InvalidConfig(e.to_string()))?;
    for k in 0..n - n_init {
        let center = &points[centers[k % centers.len()]];
        let local = center.0.iter().map(|&c| if sd > 0.0 { clip(c + noise.sample(rng), delta) } else { c }).collect();
        points.push(PerturbationVector(local));
    }
    Ok(AdaptiveBatch { points, scores, centers })
}
