//! AdamW, gradient clipping and learning-rate schedules.

use std::f64::consts::PI;

use crate::network::NetworkParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `lr_min + (lr_max - lr_min)(1 + cos(π t / t_max)) / 2`.
pub fn cosine_lr(t: usize, t_max: usize, lr_max: f64, lr_min: f64) -> f64 {
    if t_max == 0 {
        return lr_max;
    }
    let phase = (t.min(t_max) as f64) / t_max as f64;
    lr_min + (lr_max - lr_min) * 0.5 * (1.0 + (PI * phase).cos())
}

/// Multiplicative learning-rate factor that halves when the loss stops improving.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub best: f64,
    pub stagnant: usize,
    pub factor: f64,
    pub patience: usize,
    pub decay: f64,
    pub floor: f64,
    /// Relative improvement needed to reset the counter.
    pub rel_eps: f64,
}

impl Plateau {
    pub fn new(patience: usize, decay: f64, floor: f64, rel_eps: f64) -> Self {
        Plateau { best: f64::INFINITY, stagnant: 0, factor: 1.0, patience, decay, floor, rel_eps }
    }

    /// Record one epoch's loss and return the factor to use from now on.
    pub fn update(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.rel_eps * self.best.abs() || (self.best.is_infinite() && loss.is_finite()) {
            self.best = loss;
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
            if self.stagnant > self.patience {
                self.factor = (self.factor * self.decay).max(self.floor);
                self.stagnant = 0;
            }
        }
        self.factor
    }
}

pub fn global_norm(grads: &NetworkParams) -> f64 {
    grads.layers.iter().flat_map(|l| l.tensors()).flat_map(|t| t.iter()).map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescale so the global L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut NetworkParams, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for layer in &mut grads.layers {
            for t in layer.tensors_mut() {
                t.iter_mut().for_each(|g| *g *= scale);
            }
        }
    }
    norm
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub step: u64,
}

impl AdamW {
    pub fn new(params: &NetworkParams) -> Self {
        AdamW { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    /// One decoupled-weight-decay update:
    /// `θ ← θ − lr (m̂ / (√v̂ + ε) + wd θ)`.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams, lr: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let layers = params.layers.iter_mut().zip(&grads.layers).zip(self.m.layers.iter_mut().zip(&mut self.v.layers));
        for ((p, g), (m, v)) in layers {
            let tensors = p.tensors_mut().into_iter().zip(g.tensors()).zip(m.tensors_mut().into_iter().zip(v.tensors_mut()));
            for ((pt, gt), (mt, vt)) in tensors {
                for k in 0..pt.len() {
                    let gk = gt[k];
                    mt[k] = BETA1 * mt[k] + (1.0 - BETA1) * gk;
                    vt[k] = BETA2 * vt[k] + (1.0 - BETA2) * gk * gk;
                    let m_hat = mt[k] / bc1;
                    let v_hat = vt[k] / bc2;
                    pt[k] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * pt[k]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::BusSets;
    use crate::network::{auto_config, init_network, ArchOverrides};

    fn params() -> NetworkParams {
        let sets = BusSets { slack: 0, pv: vec![1], pq: vec![2] };
        init_network(&auto_config(&sets, &ArchOverrides::default()).unwrap(), 0)
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10_000, 5e-4, 1e-6), 5e-4);
        assert_eq!(cosine_lr(10_000, 10_000, 5e-4, 1e-6), 1e-6);
        assert!((cosine_lr(5_000, 10_000, 5e-4, 1e-6) - (5e-4 + 1e-6) / 2.0).abs() < 1e-18);
    }

    #[test]
    fn plateau_halves_after_patience_plus_one() {
        let mut p = Plateau::new(500, 0.5, 1e-6 / 5e-4, 1e-4);
        assert_eq!(p.update(1.0), 1.0);
        for _ in 0..500 {
            assert_eq!(p.update(1.0), 1.0);
        }
        assert_eq!(p.update(1.0), 0.5);
        for _ in 0..501 {
            p.update(2.0);
        }
        assert_eq!(p.factor, 0.25);
    }

    #[test]
    fn plateau_stays_put_while_improving() {
        let mut p = Plateau::new(3, 0.5, 0.0, 1e-4);
        for k in 0..100 {
            assert_eq!(p.update(1.0 / (k + 1) as f64), 1.0);
        }
    }

    #[test]
    fn plateau_respects_floor() {
        let mut p = Plateau::new(0, 0.5, 0.3, 0.0);
        p.update(1.0);
        for _ in 0..10 {
            p.update(1.0);
        }
        assert_eq!(p.factor, 0.3);
    }

    #[test]
    fn clipping() {
        let mut g = params().zeros_like();
        assert_eq!(clip_gradients(&mut g, 1.0), 0.0);
        g.layers[0].bias[0] = 0.3;
        g.layers[0].bias[1] = 0.4;
        assert_eq!(clip_gradients(&mut g, 1.0), 0.5);
        assert_eq!(g.layers[0].bias[0], 0.3);
        g.layers[0].bias[0] = 2.4;
        g.layers[0].bias[1] = 3.2;
        assert_eq!(clip_gradients(&mut g, 1.0), 4.0);
        assert!((g.layers[0].bias[0] - 0.6).abs() < 1e-15);
        assert!((global_norm(&g) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_is_lr_sized() {
        let mut p = params();
        let before = p.layers[0].bias[0];
        let mut g = p.zeros_like();
        g.layers[0].bias[0] = 1.0;
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &g, 0.1, 0.0);
        assert!((p.layers[0].bias[0] - (before - 0.1)).abs() < 1e-8);
        assert_eq!(p.layers[0].bias[1], 0.0);
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut p = params();
        let w0 = p.layers[1].weight[[0, 0]];
        let g = p.zeros_like();
        let mut opt = AdamW::new(&p);
        opt.step(&mut p, &g, 0.01, 0.1);
        opt.step(&mut p, &g, 0.01, 0.1);
        assert!((p.layers[1].weight[[0, 0]] - w0 * 0.999 * 0.999).abs() < 1e-15);
        let mut q = params();
        AdamW::new(&q).step(&mut q, &g, 0.01, 0.0);
        assert_eq!(q, params());
    }
}
