//! Synthetic datasets and a small train/evaluate runner.
//!
//! Generators are written out in closed form so runs are reproducible from a
//! seed alone:
//!
//! | name             | construction                                                        |
//! |------------------|---------------------------------------------------------------------|
//! | `blobs3`         | K isotropic Gaussians centred on a radius-10 circle in 2-D          |
//! | `moons`          | upper unit half-circle and a lower one shifted by `(1, -0.5)`      |
//! | `circles`        | two concentric circles, inner radius `factor`                       |
//! | `highdim_binary` | class-shifted Gaussian means on `n_informative` of `d` features     |
//! | `complex100d`    | sign of a non-linear score over 8 of 100 Gaussian features          |
//! | `imbalanced4`    | four overlapping Gaussian classes in 8-D drawn with given weights   |
//!
//! Noise parameters default to moons 0.2, circles 0.1 (factor 0.5), blobs
//! std 1.0.

use std::f64::consts::PI;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::booster::{fit, predict};
use crate::data::{stratified_split, Dataset, SplitKind, TrainConfig};
use crate::error::{MorphBoostError, Result};

pub const TEST_FRACTION: f64 = 0.2;

/// Mean shift of each informative feature in `highdim_binary`.
const HIGHDIM_SEPARATION: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticKind {
    Blobs { k: usize, cluster_std: f64 },
    TwoMoons { noise: f64 },
    Circles { noise: f64, factor: f64 },
    /// `noise` is the label flip probability.
    HighDimBinary { d: usize, n_informative: usize, noise: f64 },
    /// `noise` scales Gaussian noise added to the latent score.
    ComplexHighDim { d: usize, noise: f64 },
    Imbalanced4Class { weights: [f64; 4] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_samples: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn name(&self) -> &'static str {
        match self.kind {
            SyntheticKind::Blobs { .. } => "blobs3",
            SyntheticKind::TwoMoons { .. } => "moons",
            SyntheticKind::Circles { .. } => "circles",
            SyntheticKind::HighDimBinary { .. } => "highdim_binary",
            SyntheticKind::ComplexHighDim { .. } => "complex100d",
            SyntheticKind::Imbalanced4Class { .. } => "imbalanced4",
        }
    }

    /// Nominal noise level, used by the majority-baseline sanity check.
    pub fn noise(&self) -> f64 {
        match self.kind {
            SyntheticKind::Blobs { .. } | SyntheticKind::Imbalanced4Class { .. } => 0.0,
            SyntheticKind::TwoMoons { noise }
            | SyntheticKind::Circles { noise, .. }
            | SyntheticKind::HighDimBinary { noise, .. }
            | SyntheticKind::ComplexHighDim { noise, .. } => noise,
        }
    }

    fn n_classes(&self) -> usize {
        match self.kind {
            SyntheticKind::Blobs { k, .. } => k,
            SyntheticKind::Imbalanced4Class { .. } => 4,
            _ => 2,
        }
    }
}

/// Names accepted by [`suite_spec`], in default suite order.
pub const SUITE_NAMES: [&str; 6] = [
    "blobs3",
    "moons",
    "circles",
    "highdim_binary",
    "complex100d",
    "imbalanced4",
];

/// The default benchmark spec for `name`.
pub fn suite_spec(name: &str, seed: u64) -> Option<SyntheticSpec> {
    let (kind, n_samples) = match name {
        "blobs3" => (SyntheticKind::Blobs { k: 3, cluster_std: 1.0 }, 300),
        "moons" => (SyntheticKind::TwoMoons { noise: 0.2 }, 1000),
        "circles" => (SyntheticKind::Circles { noise: 0.1, factor: 0.5 }, 1000),
        "highdim_binary" => (
            SyntheticKind::HighDimBinary {
                d: 50,
                n_informative: 10,
                noise: 0.02,
            },
            1000,
        ),
        "complex100d" => (SyntheticKind::ComplexHighDim { d: 100, noise: 0.5 }, 1000),
        "imbalanced4" => (
            SyntheticKind::Imbalanced4Class {
                weights: [0.6, 0.2, 0.1, 0.1],
            },
            1000,
        ),
        _ => return None,
    };
    Some(SyntheticSpec {
        kind,
        n_samples,
        seed,
    })
}

pub fn default_suite(seed: u64) -> Vec<SyntheticSpec> {
    SUITE_NAMES
        .iter()
        .map(|n| suite_spec(n, seed).expect("suite names are valid"))
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Splits `n` into per-class counts proportional to `weights`
/// (largest remainder rounding, so counts sum to `n`).
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Generates the dataset described by `spec`. Deterministic given the seed.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    let n = spec.n_samples;
    let k = spec.n_classes();
    if n < 4 * k {
        return Err(MorphBoostError::Spec(format!(
            "{} needs at least {} samples, got {n}",
            spec.name(),
            4 * k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut target: Vec<f64> = Vec::with_capacity(n);

    match spec.kind {
        SyntheticKind::Blobs { k, cluster_std } => {
            if cluster_std < 0.0 || k < 2 {
                return Err(MorphBoostError::Spec("blobs need k >= 2 and std >= 0".into()));
            }
            for (class, count) in apportion(n, &vec![1.0; k]).into_iter().enumerate() {
                let angle = 2.0 * PI * class as f64 / k as f64;
                let (cx, cy) = (10.0 * angle.cos(), 10.0 * angle.sin());
                for _ in 0..count {
                    rows.push(vec![
                        cx + cluster_std * normal(&mut rng),
                        cy + cluster_std * normal(&mut rng),
                    ]);
                    target.push(class as f64);
                }
            }
        }
        SyntheticKind::TwoMoons { noise } => {
            if noise < 0.0 {
                return Err(MorphBoostError::Spec("noise must be >= 0".into()));
            }
            let n_outer = n / 2;
            let n_inner = n - n_outer;
            for i in 0..n_outer {
                let theta = PI * i as f64 / (n_outer - 1) as f64;
                rows.push(vec![theta.cos(), theta.sin()]);
                target.push(0.0);
            }
            for i in 0..n_inner {
                let theta = PI * i as f64 / (n_inner - 1) as f64;
                rows.push(vec![1.0 - theta.cos(), 1.0 - theta.sin() - 0.5]);
                target.push(1.0);
            }
            if noise > 0.0 {
                for row in &mut rows {
                    for v in row.iter_mut() {
                        *v += noise * normal(&mut rng);
                    }
                }
            }
        }
        SyntheticKind::Circles { noise, factor } => {
            if noise < 0.0 || !(factor > 0.0 && factor < 1.0) {
                return Err(MorphBoostError::Spec(
                    "circles need noise >= 0 and 0 < factor < 1".into(),
                ));
            }
            let n_outer = n / 2;
            let n_inner = n - n_outer;
            for (count, radius, label) in [(n_outer, 1.0, 0.0), (n_inner, factor, 1.0)] {
                for i in 0..count {
                    let theta = 2.0 * PI * i as f64 / count as f64;
                    rows.push(vec![
                        radius * theta.cos() + noise * normal(&mut rng),
                        radius * theta.sin() + noise * normal(&mut rng),
                    ]);
                    target.push(label);
                }
            }
        }
        SyntheticKind::HighDimBinary {
            d,
            n_informative,
            noise,
        } => {
            if n_informative > d || n_informative == 0 {
                return Err(MorphBoostError::Spec(format!(
                    "n_informative {n_informative} must be in 1..={d}"
                )));
            }
            if !(0.0..0.5).contains(&noise) {
                return Err(MorphBoostError::Spec("flip probability must be in [0, 0.5)".into()));
            }
            let signs: Vec<f64> = (0..n_informative)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            for i in 0..n {
                let class = i % 2;
                let shift = if class == 1 { HIGHDIM_SEPARATION } else { -HIGHDIM_SEPARATION };
                let row: Vec<f64> = (0..d)
                    .map(|j| {
                        let z = normal(&mut rng);
                        if j < n_informative {
                            z + signs[j] * shift
                        } else {
                            z
                        }
                    })
                    .collect();
                rows.push(row);
                let flip = rng.gen::<f64>() < noise;
                target.push(if flip { 1.0 - class as f64 } else { class as f64 });
            }
        }
        SyntheticKind::ComplexHighDim { d, noise } => {
            if d < 8 || noise < 0.0 {
                return Err(MorphBoostError::Spec("complex spec needs d >= 8, noise >= 0".into()));
            }
            for _ in 0..n {
                let x: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
                let score = x[0] * x[1] + x[2] * x[2] - 1.0 + (PI * x[3]).sin() + 0.5 * x[4]
                    - x[5] * x[6]
                    + 0.5 * x[7].abs()
                    - 0.4
                    + noise * normal(&mut rng);
                rows.push(x);
                target.push(if score > 0.0 { 1.0 } else { 0.0 });
            }
        }
        SyntheticKind::Imbalanced4Class { weights } => {
            if weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
                return Err(MorphBoostError::Spec("class weights must be positive".into()));
            }
            let counts = apportion(n, &weights);
            let mut labels: Vec<usize> = counts
                .iter()
                .enumerate()
                .flat_map(|(c, &m)| std::iter::repeat_n(c, m))
                .collect();
            labels.shuffle(&mut rng);
            for class in labels {
                let row: Vec<f64> = (0..8)
                    .map(|j| normal(&mut rng) + if j / 2 == class { 1.5 } else { 0.0 })
                    .collect();
                rows.push(row);
                target.push(class as f64);
            }
        }
    }
    for (i, t) in target.iter().enumerate() {
        debug_assert!(t.is_finite(), "row {i}");
    }
    Dataset::from_rows(&rows, target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub dataset: String,
    pub model: String,
    /// Held-out accuracy; `NaN` when the run failed.
    pub accuracy: f64,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
    pub error: Option<String>,
}

pub fn accuracy(predicted: &[f64], actual: &[f64]) -> f64 {
    if actual.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    hits as f64 / actual.len() as f64
}

/// Accuracy of always predicting the most frequent training label.
pub fn majority_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let mut counts: Vec<(f64, usize)> = Vec::new();
    for &y in train.target() {
        match counts.iter_mut().find(|(v, _)| *v == y) {
            Some((_, c)) => *c += 1,
            None => counts.push((y, 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let majority = counts.first().map_or(0.0, |c| c.0);
    accuracy(&vec![majority; test.n_samples()], test.target())
}

fn run_one(spec: &SyntheticSpec, config: &TrainConfig, split_seed: u64) -> Result<(f64, f64, f64)> {
    let data = generate(spec)?;
    let (train, test) = stratified_split(&data, TEST_FRACTION, split_seed, SplitKind::Stratified)?;
    let started = Instant::now();
    let model = fit(&train, config, None)?;
    let fit_seconds = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let predicted = predict(&model, test.features())?;
    let predict_seconds = started.elapsed().as_secs_f64();
    Ok((accuracy(&predicted, test.target()), fit_seconds, predict_seconds))
}

/// Runs every `(spec, config)` pair: generate, 80/20 stratified split, fit,
/// predict, score. Failed runs are reported with an error and do not stop
/// the remaining ones. Results follow input order (specs outer).
pub fn run_suite(specs: &[SyntheticSpec], configs: &[TrainConfig], split_seed: u64) -> Vec<BenchResult> {
    let mut out = Vec::with_capacity(specs.len() * configs.len());
    for spec in specs {
        for (i, config) in configs.iter().enumerate() {
            let model = if configs.len() == 1 {
                "morphboost".to_string()
            } else {
                format!("morphboost-{i}")
            };
            let result = match run_one(spec, config, split_seed) {
                Ok((accuracy, fit_seconds, predict_seconds)) => BenchResult {
                    dataset: spec.name().to_string(),
                    model,
                    accuracy,
                    fit_seconds,
                    predict_seconds,
                    error: None,
                },
                Err(e) => BenchResult {
                    dataset: spec.name().to_string(),
                    model,
                    accuracy: f64::NAN,
                    fit_seconds: 0.0,
                    predict_seconds: 0.0,
                    error: Some(e.to_string()),
                },
            };
            out.push(result);
        }
    }
    out
}

/// Results as CSV. Without `with_timings` the timing columns are left empty
/// so the file depends only on the seeds.
pub fn results_csv(results: &[BenchResult], with_timings: bool) -> String {
    let mut s = String::from("dataset,model,accuracy,fit_seconds,predict_seconds\n");
    for r in results {
        let accuracy = match &r.error {
            Some(_) => "error".to_string(),
            None => r.accuracy.to_string(),
        };
        let (fit, pred) = if with_timings && r.error.is_none() {
            (format!("{:.6}", r.fit_seconds), format!("{:.6}", r.predict_seconds))
        } else {
            (String::new(), String::new())
        };
        s.push_str(&format!("{},{},{accuracy},{fit},{pred}\n", r.dataset, r.model));
    }
    s
}

/// Aligned plain-text table, timings included.
pub fn results_table(results: &[BenchResult]) -> String {
    let mut s = format!(
        "{:<16} {:<14} {:>9} {:>10} {:>12}\n",
        "dataset", "model", "accuracy", "fit_s", "predict_s"
    );
    for r in results {
        match &r.error {
            None => s.push_str(&format!(
                "{:<16} {:<14} {:>9.4} {:>10.3} {:>12.4}\n",
                r.dataset, r.model, r.accuracy, r.fit_seconds, r.predict_seconds
            )),
            Some(e) => s.push_str(&format!("{:<16} {:<14} ERROR: {e}\n", r.dataset, r.model)),
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(d: &Dataset, k: usize) -> Vec<usize> {
        (0..k)
            .map(|c| d.target().iter().filter(|&&y| y == c as f64).count())
            .collect()
    }

    #[test]
    fn blobs_balanced() {
        let d = generate(&SyntheticSpec {
            kind: SyntheticKind::Blobs { k: 3, cluster_std: 0.1 },
            n_samples: 300,
            seed: 1,
        })
        .unwrap();
        assert_eq!(counts(&d, 3), vec![100, 100, 100]);
        assert_eq!(d.n_features(), 2);
    }

    #[test]
    fn noiseless_moons_on_half_circles() {
        let d = generate(&SyntheticSpec {
            kind: SyntheticKind::TwoMoons { noise: 0.0 },
            n_samples: 200,
            seed: 1,
        })
        .unwrap();
        for i in 0..d.n_samples() {
            let (x, y) = (d.features().get(i, 0), d.features().get(i, 1));
            let r = if d.target()[i] == 0.0 {
                (x * x + y * y).sqrt()
            } else {
                ((x - 1.0).powi(2) + (y + 0.5 - 1.0).powi(2)).sqrt()
            };
            assert!((r - 1.0).abs() < 1e-12);
            if d.target()[i] == 0.0 {
                assert!(y >= -1e-12);
            } else {
                assert!(y <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn imbalanced_proportions() {
        let d = generate(&suite_spec("imbalanced4", 3).unwrap()).unwrap();
        assert_eq!(counts(&d, 4), vec![600, 200, 100, 100]);
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
    }

    #[test]
    fn spec_errors() {
        let bad = SyntheticSpec {
            kind: SyntheticKind::HighDimBinary {
                d: 5,
                n_informative: 6,
                noise: 0.0,
            },
            n_samples: 100,
            seed: 0,
        };
        assert!(matches!(generate(&bad), Err(MorphBoostError::Spec(_))));
        let tiny = SyntheticSpec {
            kind: SyntheticKind::Blobs { k: 3, cluster_std: 1.0 },
            n_samples: 11,
            seed: 0,
        };
        assert!(matches!(generate(&tiny), Err(MorphBoostError::Spec(_))));
    }

    #[test]
    fn generators_are_deterministic() {
        for spec in default_suite(9) {
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap(), "{}", spec.name());
        }
        assert_eq!(default_suite(1).len(), 6);
        assert!(suite_spec("nope", 1).is_none());
    }

    #[test]
    fn prior_only_model_scores_majority_rate() {
        let spec = suite_spec("imbalanced4", 5).unwrap();
        let cfg = TrainConfig {
            n_iterations: 0,
            ..TrainConfig::default()
        };
        let results = run_suite(std::slice::from_ref(&spec), &[cfg], 42);
        let data = generate(&spec).unwrap();
        let (train, test) = stratified_split(&data, 0.2, 42, SplitKind::Stratified).unwrap();
        assert_eq!(results[0].accuracy, majority_accuracy(&train, &test));
        assert!((results[0].accuracy - 0.6).abs() < 0.01);
    }

    #[test]
    fn failed_run_is_marked_and_suite_continues() {
        let bad = SyntheticSpec {
            kind: SyntheticKind::Circles { noise: 0.1, factor: 2.0 },
            n_samples: 100,
            seed: 0,
        };
        let good = suite_spec("blobs3", 1).unwrap();
        let cfg = TrainConfig {
            n_iterations: 3,
            ..TrainConfig::default()
        };
        let results = run_suite(&[bad, good], &[cfg], 1);
        assert_eq!(results.len(), 2);
        assert!(results[0].error.is_some());
        assert!(results[1].error.is_none());
        let csv = results_csv(&results, false);
        assert!(csv.lines().nth(1).unwrap().starts_with("circles,morphboost,error,"));
        assert!(results_table(&results).contains("ERROR"));
    }
}
