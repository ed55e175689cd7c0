//! Pre-training dataset analysis.
//!
//! A [`ProblemFingerprint`] records the detected task plus a handful of cheap
//! statistics (feature spread, how much a quadratic or pairwise-product view
//! of the features explains the target beyond a linear one, and a noise
//! proxy). Only the effective tree depth is derived from it.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskKind};
use crate::error::{MorphBoostError, Result};
use crate::stats::{pearson, population_std, sorted_unique};

pub const EPSILON: f64 = 1e-10;

/// Unique-to-sample ratio above which the target is treated as continuous.
pub const REGRESSION_UNIQUE_RATIO: f64 = 0.05;
/// Unique count above which the target is treated as continuous.
pub const REGRESSION_UNIQUE_COUNT: usize = 20;

pub const FAST_NON_LINEARITY: f64 = 0.2;
pub const FAST_INTERACTION_STRENGTH: f64 = 0.15;
pub const FAST_NOISE_LEVEL: f64 = 0.1;
pub const FAST_MAX_DEPTH: usize = 8;
pub const MAX_ADAPTIVE_DEPTH: usize = 10;
const MIN_ADAPTIVE_DEPTH: usize = 3;

const MAX_SAMPLED_FEATURES: usize = 10;
const MAX_SAMPLED_PAIRS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFingerprint {
    pub task: TaskKind,
    pub complexity: f64,
    pub non_linearity: f64,
    pub interaction_strength: f64,
    pub noise_level: f64,
    pub effective_max_depth: usize,
}

impl ProblemFingerprint {
    /// Full analysis of `data`. In fast mode the correlation statistics are
    /// replaced by fixed constants.
    pub fn compute(
        data: &Dataset,
        fast_mode: bool,
        depth_override: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let task = detect_task(data.target(), data.n_samples())?;
        let complexity = complexity(data);
        let (non_linearity, interaction_strength, noise_level) = if fast_mode {
            (FAST_NON_LINEARITY, FAST_INTERACTION_STRENGTH, FAST_NOISE_LEVEL)
        } else {
            (
                non_linearity(data, seed),
                interaction_strength(data, seed),
                noise_level(data, seed),
            )
        };
        let mut fp = ProblemFingerprint {
            task,
            complexity,
            non_linearity,
            interaction_strength,
            noise_level,
            effective_max_depth: 0,
        };
        fp.effective_max_depth = derive_depth(&fp, fast_mode, depth_override);
        Ok(fp)
    }

    /// `key=value` lines, one per field.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut out = vec![("task".to_string(), self.task.name().to_string())];
        if let TaskKind::MulticlassClassification(k) = self.task {
            out.push(("n_classes".into(), k.to_string()));
        }
        out.push(("complexity".into(), self.complexity.to_string()));
        out.push(("non_linearity".into(), self.non_linearity.to_string()));
        out.push((
            "interaction_strength".into(),
            self.interaction_strength.to_string(),
        ));
        out.push(("noise_level".into(), self.noise_level.to_string()));
        out.push((
            "effective_max_depth".into(),
            self.effective_max_depth.to_string(),
        ));
        out
    }
}

/// Classifies the target as regression, binary or multiclass from its
/// distinct-value count.
pub fn detect_task(target: &[f64], n_samples: usize) -> Result<TaskKind> {
    let unique = sorted_unique(target).len();
    if unique <= 1 {
        return Err(MorphBoostError::DegenerateTarget(n_samples));
    }
    let ratio = unique as f64 / n_samples.max(1) as f64;
    Ok(
        if ratio > REGRESSION_UNIQUE_RATIO || unique > REGRESSION_UNIQUE_COUNT {
            TaskKind::Regression
        } else if unique == 2 {
            TaskKind::BinaryClassification
        } else {
            TaskKind::MulticlassClassification(unique)
        },
    )
}

/// Mean over features of `std / (range + eps)`.
pub fn complexity(data: &Dataset) -> f64 {
    let features = data.features();
    let d = features.n_cols();
    let total: f64 = features
        .columns()
        .iter()
        .map(|col| {
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            population_std(col) / (hi - lo + EPSILON)
        })
        .sum();
    total / d as f64
}

fn sampled_features(d: usize, seed: u64) -> Vec<usize> {
    if d <= MAX_SAMPLED_FEATURES {
        return (0..d).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, d, MAX_SAMPLED_FEATURES).into_vec();
    idx.sort_unstable();
    idx
}

fn sampled_pairs(d: usize, seed: u64) -> Vec<(usize, usize)> {
    let all_pairs = d * d.saturating_sub(1) / 2;
    let pair_at = |mut k: usize| {
        // k-th pair in lexicographic order
        let mut a = 0;
        while k >= d - a - 1 {
            k -= d - a - 1;
            a += 1;
        }
        (a, a + 1 + k)
    };
    if all_pairs <= MAX_SAMPLED_PAIRS {
        return (0..all_pairs).map(pair_at).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut idx = sample(&mut rng, all_pairs, MAX_SAMPLED_PAIRS).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(pair_at).collect()
}

/// How much `x^2` correlates with the target beyond `x` itself, averaged over
/// up to ten sampled features.
pub fn non_linearity(data: &Dataset, seed: u64) -> f64 {
    let y = data.target();
    let mut acc = 0.0;
    let mut count = 0usize;
    for j in sampled_features(data.n_features(), seed) {
        let x = data.features().column(j);
        let Some(r_lin) = pearson(x, y) else { continue };
        let squared: Vec<f64> = x.iter().map(|v| v * v).collect();
        let r_quad = pearson(&squared, y).unwrap_or(0.0);
        acc += (r_quad.abs() - r_lin.abs()).max(0.0);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        (acc / count as f64).clamp(0.0, 1.0)
    }
}

/// How much pairwise products correlate with the target beyond either factor,
/// averaged over up to ten sampled pairs.
pub fn interaction_strength(data: &Dataset, seed: u64) -> f64 {
    let d = data.n_features();
    if d < 2 {
        return 0.0;
    }
    let y = data.target();
    let mut acc = 0.0;
    let mut count = 0usize;
    for (a, b) in sampled_pairs(d, seed) {
        let xa = data.features().column(a);
        let xb = data.features().column(b);
        let product: Vec<f64> = xa.iter().zip(xb).map(|(p, q)| p * q).collect();
        let Some(r_prod) = pearson(&product, y) else {
            continue;
        };
        let r_a = pearson(xa, y).unwrap_or(0.0).abs();
        let r_b = pearson(xb, y).unwrap_or(0.0).abs();
        acc += (r_prod.abs() - r_a.max(r_b)).max(0.0);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        (acc / count as f64).clamp(0.0, 1.0)
    }
}

/// `1 - max |corr(x_j, y)|` over the sampled features.
pub fn noise_level(data: &Dataset, seed: u64) -> f64 {
    let y = data.target();
    let best = sampled_features(data.n_features(), seed)
        .into_iter()
        .filter_map(|j| pearson(data.features().column(j), y))
        .map(f64::abs)
        .fold(0.0, f64::max);
    (1.0 - best).clamp(0.0, 1.0)
}

/// Tree depth limit: the override if given, 8 in fast mode, otherwise an
/// affine map of complexity onto `[3, 10]`.
pub fn derive_depth(fp: &ProblemFingerprint, fast_mode: bool, depth_override: Option<usize>) -> usize {
    if let Some(depth) = depth_override {
        return depth;
    }
    if fast_mode {
        return FAST_MAX_DEPTH;
    }
    let normalized = (fp.complexity / 0.5).min(1.0);
    let depth = (4.0 + 12.0 * normalized).round() as usize;
    depth.clamp(MIN_ADAPTIVE_DEPTH, MAX_ADAPTIVE_DEPTH)
}
