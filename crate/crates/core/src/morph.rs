//! The morphing split score and the learning-rate schedule.
//!
//! For the first few iterations a node is scored purely by its second-order
//! gradient term `G² / (H + λ)`. After that an information term built from
//! gradients normalized by running (EMA) gradient statistics is blended in,
//! gated by `tanh(t / 20)` so it fades in smoothly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::TrainConfig;
use crate::stats::{mean, population_std};

/// Iterations below this use the pure gradient score.
pub const PURE_GRADIENT_ITERATIONS: usize = 5;
pub const GRADIENT_WEIGHT: f64 = 0.7;
pub const DEFAULT_INFO_WEIGHT: f64 = 0.3;
/// The information term is gated by `tanh(t / GATE_SCALE)`.
pub const GATE_SCALE: f64 = 20.0;
pub const NORMALIZE_EPSILON: f64 = 1e-10;

pub const WARMUP_FRACTION: f64 = 0.1;
/// Floor of the annealed learning rate as a fraction of the base rate.
pub const MIN_LR_FRACTION: f64 = 0.01;

/// Running gradient statistics plus the iteration counters that drive the
/// score blend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphState {
    pub ema_mean: f64,
    pub ema_std: f64,
    pub decay: f64,
    pub iteration: usize,
    pub total_iterations: usize,
    pub evolution_pressure: f64,
    pub info_weight: f64,
    pub initialized: bool,
}

/// Components of a node's morph score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeScoreParts {
    pub gradient_part: f64,
    pub info_part: f64,
    pub blended: f64,
}

impl MorphState {
    pub fn new(decay: f64, total_iterations: usize, evolution_pressure: f64) -> Self {
        MorphState {
            ema_mean: 0.0,
            ema_std: 0.0,
            decay,
            iteration: 0,
            total_iterations: total_iterations.max(1),
            evolution_pressure,
            info_weight: DEFAULT_INFO_WEIGHT,
            initialized: false,
        }
    }

    pub fn from_config(config: &TrainConfig) -> Self {
        MorphState {
            info_weight: config.info_weight,
            ..Self::new(config.ema_decay, config.n_iterations, config.evolution_pressure)
        }
    }

    /// Whether the information term participates at the current iteration.
    pub fn morphing_active(&self) -> bool {
        self.iteration >= PURE_GRADIENT_ITERATIONS
    }

    /// Folds one iteration's gradient vector into the EMA statistics. The
    /// first call seeds the averages directly.
    pub fn update_stats(&mut self, grad: &[f64]) {
        let m = mean(grad);
        let s = population_std(grad);
        if self.initialized {
            let a = self.decay;
            self.ema_mean = (1.0 - a) * self.ema_mean + a * m;
            self.ema_std = ((1.0 - a) * self.ema_std + a * s).max(0.0);
        } else {
            self.ema_mean = m;
            self.ema_std = s;
            self.initialized = true;
        }
    }

    /// Per-sample gradient and information scores. Information scores are all
    /// zero until morphing is active.
    pub fn per_sample_scores(&self, grad: &[f64], hess: &[f64], lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let grad_scores = grad
            .iter()
            .zip(hess)
            .map(|(g, h)| g * g / (h + lambda))
            .collect();
        let info_scores = if self.morphing_active() && self.initialized {
            let damping = 1.0
                + self.evolution_pressure * self.iteration as f64 / self.total_iterations as f64;
            let scale = self.ema_std + NORMALIZE_EPSILON;
            grad.iter()
                .map(|g| {
                    let normalized = (g - self.ema_mean) / scale;
                    normalized.abs() * g.abs().ln_1p() / damping
                })
                .collect()
        } else {
            vec![0.0; grad.len()]
        };
        (grad_scores, info_scores)
    }

    /// Morph score of a node from its gradient, Hessian and information sums.
    #[inline]
    pub fn node_score(&self, sum_g: f64, sum_h: f64, sum_info: f64, lambda: f64) -> NodeScoreParts {
        let gradient_part = sum_g * sum_g / (sum_h + lambda);
        let blended = if self.morphing_active() {
            let gate = (self.iteration as f64 / GATE_SCALE).tanh();
            GRADIENT_WEIGHT * gradient_part + self.info_weight * sum_info * gate
        } else {
            gradient_part
        };
        NodeScoreParts {
            gradient_part,
            info_part: sum_info,
            blended,
        }
    }
}

/// Number of warm-up iterations for a run of `total` iterations.
pub fn warmup_iterations(total: usize) -> usize {
    ((WARMUP_FRACTION * total as f64).floor() as usize).max(1)
}

/// Learning rate at iteration `t` of `total`: linear warm-up over the first
/// 10% of iterations, then cosine annealing down to 1% of the base rate.
pub fn learning_rate(t: usize, total: usize, base: f64, adaptive: bool) -> f64 {
    if !adaptive {
        return base;
    }
    let warmup = warmup_iterations(total);
    if t < warmup {
        return base * (t + 1) as f64 / warmup as f64;
    }
    if total <= warmup {
        return base;
    }
    let min = MIN_LR_FRACTION * base;
    let progress = (t - warmup) as f64 / (total - warmup) as f64;
    min + 0.5 * (base - min) * (1.0 + (PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_update_seeds_stats() {
        let mut s = MorphState::new(0.05, 10, 0.1);
        s.update_stats(&[1.0, 1.0, 1.0]);
        assert!(s.initialized);
        assert_eq!(s.ema_mean, 1.0);
        assert_eq!(s.ema_std, 0.0);
    }

    #[test]
    fn ema_update_substitution() {
        let mut s = MorphState::new(0.05, 10, 0.1);
        s.ema_mean = 0.0;
        s.ema_std = 1.0;
        s.initialized = true;
        // mean 1, population std 1
        s.update_stats(&[0.0, 2.0]);
        assert!((s.ema_mean - 0.05).abs() < 1e-15);
        assert!((s.ema_std - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ema_converges_geometrically() {
        let mut s = MorphState::new(0.05, 10, 0.1);
        s.update_stats(&[0.0]);
        let mut gap = 3.0;
        for _ in 0..300 {
            s.update_stats(&[3.0, 3.0]);
            let new_gap = (s.ema_mean - 3.0).abs();
            assert!((new_gap - 0.95 * gap).abs() < 1e-12);
            gap = new_gap;
        }
        assert!(gap < 1e-4);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn per_sample_examples() {
        let mut s = MorphState::new(0.05, 100, 0.0);
        let (g, info) = s.per_sample_scores(&[2.0], &[3.0], 1.0);
        assert_eq!(g, vec![1.0]);
        assert_eq!(info, vec![0.0]);

        s.iteration = 3;
        s.initialized = true;
        s.ema_std = 1.0;
        let (_, info) = s.per_sample_scores(&[1.0, -4.0], &[1.0, 1.0], 1.0);
        assert_eq!(info, vec![0.0, 0.0]);

        s.iteration = 10;
        let (_, info) = s.per_sample_scores(&[1.0], &[1.0], 1.0);
        // |1 - 0| / (1 + 1e-10) * ln 2
        let expected = std::f64::consts::LN_2 / (1.0 + 1e-10);
        assert!((info[0] - expected).abs() < 1e-15);
        assert!((info[0] - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn node_score_phases() {
        let mut s = MorphState::new(0.05, 100, 0.1);
        let parts = s.node_score(0.0, 5.0, 3.0, 1.0);
        assert_eq!(parts.gradient_part, 0.0);
        assert_eq!(parts.blended, 0.0);

        s.ema_mean = 123.0;
        let at0 = s.node_score(2.0, 3.0, 7.0, 1.0);
        s.iteration = 4;
        s.ema_mean = -9.0;
        assert_eq!(s.node_score(2.0, 3.0, 7.0, 1.0), at0);

        s.iteration = 20;
        let parts = s.node_score(2.0, 3.0, 1.0, 1.0);
        let gate = 1.0f64.tanh();
        assert!((gate - 0.7616).abs() < 1e-4);
        assert!((parts.blended - (0.7 * 1.0 + 0.3 * gate)).abs() < 1e-15);
    }

    #[test]
    fn schedule_endpoints() {
        assert!((learning_rate(0, 100, 0.1, true) - 0.01).abs() < 1e-15);
        assert!((learning_rate(10, 100, 0.1, true) - 0.1).abs() < 1e-15);
        // t = 99: 0.001 + 0.0495 (1 + cos(89π/90))
        let expected = 0.001 + 0.5 * 0.099 * (1.0 + (PI * 89.0 / 90.0).cos());
        let got = learning_rate(99, 100, 0.1, true);
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.001).abs() < 1e-4);
        assert_eq!(learning_rate(57, 100, 0.3, false), 0.3);
        // T = 1: single warm-up step at full rate; T = T_warmup guard
        assert_eq!(learning_rate(0, 1, 0.2, true), 0.2);
        assert_eq!(warmup_iterations(5), 1);
    }

    proptest! {
        #[test]
        fn schedule_shape(total in 1usize..400, base in 1e-4f64..2.0) {
            let warmup = warmup_iterations(total);
            let min = MIN_LR_FRACTION * base;
            let mut prev = f64::NEG_INFINITY;
            for t in 0..total {
                let lr = learning_rate(t, total, base, true);
                prop_assert!(lr >= min * (1.0 - 1e-12) && lr <= base * (1.0 + 1e-12));
                if t < warmup {
                    prop_assert!(lr >= prev);
                } else if t > warmup {
                    prop_assert!(lr <= prev);
                }
                prev = lr;
            }
        }

        #[test]
        fn scores_permutation_and_sign(
            pairs in prop::collection::vec((-5.0f64..5.0, 0.0f64..2.0), 1..30),
            t in 0usize..50,
            rot in 0usize..30,
        ) {
            let mut s = MorphState::new(0.05, 50, 0.1);
            let g: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let h: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            s.update_stats(&g);
            s.iteration = t;
            let (gs, is) = s.per_sample_scores(&g, &h, 1.0);
            let r = rot % g.len();
            let mut g2 = g.clone();
            let mut h2 = h.clone();
            g2.rotate_left(r);
            h2.rotate_left(r);
            let (gs2, is2) = s.per_sample_scores(&g2, &h2, 1.0);
            let mut gs_rot = gs.clone();
            let mut is_rot = is.clone();
            gs_rot.rotate_left(r);
            is_rot.rotate_left(r);
            prop_assert_eq!(gs_rot, gs2);
            prop_assert_eq!(is_rot, is2);

            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let (gs_neg, _) = s.per_sample_scores(&neg, &h, 1.0);
            prop_assert_eq!(gs, gs_neg);
            prop_assert!(s.ema_std >= 0.0);
        }
    }
}
