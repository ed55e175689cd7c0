use morphboost::bench::{generate, suite_spec};
use morphboost::booster::{model_from_str, model_to_string};
use morphboost::losses;
use morphboost::predict::predict_raw;
use morphboost::{
    fit, predict, predict_proba, Dataset, FeatureMatrix, MorphBoostError, TaskKind, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(t: usize) -> TrainConfig {
    TrainConfig {
        n_iterations: t,
        ..TrainConfig::default()
    }
}

fn two_blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let c = (i % 2) as f64;
        rows.push(vec![
            c * 6.0 + rng.gen_range(-1.0..1.0),
            c * -4.0 + rng.gen_range(-1.0..1.0),
        ]);
        y.push(c);
    }
    Dataset::from_rows(&rows, y).unwrap()
}

fn random_rows(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-15.0..15.0)).collect())
        .collect();
    FeatureMatrix::from_rows(&rows).unwrap()
}

#[test]
fn zero_iterations_predicts_prior() {
    let mut y = vec![0.0; 30];
    y.extend(vec![1.0; 10]);
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
    let data = Dataset::from_rows(&rows, y).unwrap();
    let model = fit(&data, &config(0), None).unwrap();
    assert!(model.trees.is_empty());
    assert_eq!(predict(&model, data.features()).unwrap(), vec![0.0; 40]);
    for p in predict_proba(&model, data.features()).unwrap() {
        assert!((p[1] - 0.25).abs() < 1e-12);
    }
    assert_eq!(model.importance, vec![0.0]);

    let reg = Dataset::from_rows(&rows, (0..40).map(|i| i as f64 * 0.5).collect()).unwrap();
    let model = fit(&reg, &config(0), None).unwrap();
    let mean = (0..40).map(|i| i as f64 * 0.5).sum::<f64>() / 40.0;
    assert_eq!(predict(&model, reg.features()).unwrap(), vec![mean; 40]);
}

#[test]
fn balanced_prior_is_exactly_half() {
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
    let y: Vec<f64> = (0..40).map(|i| (i % 2) as f64 * 3.0 + 2.0).collect();
    let model = fit(&Dataset::from_rows(&rows, y).unwrap(), &config(0), None).unwrap();
    assert_eq!(model.base_score.values(), vec![0.0]);
    let x = random_rows(5, 1, 1);
    // raw 0 maps to the first label (strict >)
    assert_eq!(predict(&model, &x).unwrap(), vec![2.0; 5]);
    assert_eq!(predict_proba(&model, &x).unwrap(), vec![vec![0.5, 0.5]; 5]);
}

#[test]
fn separable_blobs_fit_exactly() {
    let data = two_blobs(120, 3);
    let model = fit(&data, &config(50), None).unwrap();
    assert_eq!(model.task, TaskKind::BinaryClassification);
    let predicted = predict(&model, data.features()).unwrap();
    assert_eq!(predicted, data.target());
    let first = model.history.records.first().unwrap().train_loss;
    assert!(model.final_train_loss().unwrap() < first);
}

#[test]
fn loss_non_increasing_with_fixed_rate_and_no_split_cost() {
    let data = two_blobs(100, 4);
    let cfg = TrainConfig {
        n_iterations: 40,
        adaptive_lr: false,
        gamma0: 0.0,
        ..TrainConfig::default()
    };
    let model = fit(&data, &cfg, None).unwrap();
    let losses: Vec<f64> = model.history.records.iter().map(|r| r.train_loss).collect();
    assert_eq!(losses.len(), 40);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn history_records_every_iteration() {
    let data = generate(&suite_spec("moons", 1).unwrap()).unwrap();
    let model = fit(&data, &config(25), None).unwrap();
    let h = &model.history.records;
    assert_eq!(h.len(), 25);
    for (t, r) in h.iter().enumerate() {
        assert_eq!(r.iteration, t);
        assert_eq!(r.learning_rate, morphboost::morph::learning_rate(t, 25, 0.1, true));
        assert!(r.mean_tree_depth <= model.fingerprint.effective_max_depth as f64);
        assert!(r.eval_loss.is_none());
    }
    assert!(h[24].train_loss < h[0].train_loss);
}

#[test]
fn multiclass_grows_k_trees_per_iteration() {
    let data = generate(&suite_spec("imbalanced4", 2).unwrap()).unwrap();
    let model = fit(&data, &config(6), None).unwrap();
    assert_eq!(model.task, TaskKind::MulticlassClassification(4));
    assert_eq!(model.trees.len(), 24);
    for (i, tree) in model.trees.iter().enumerate() {
        assert_eq!(tree.iteration, i / 4);
        assert_eq!(tree.class_index, Some(i % 4));
    }
    assert_eq!(model.label_map.as_deref(), Some(&[0.0, 1.0, 2.0, 3.0][..]));
}

#[test]
fn labels_map_back_to_original_values() {
    let data = two_blobs(60, 5);
    let y: Vec<f64> = data.target().iter().map(|v| if *v == 1.0 { 7.5 } else { -3.0 }).collect();
    let relabeled = Dataset::from_columns(data.features().columns().to_vec(), y.clone()).unwrap();
    let model = fit(&relabeled, &config(20), None).unwrap();
    assert_eq!(predict(&model, relabeled.features()).unwrap(), y);
}

#[test]
fn regression_predict_is_raw() {
    let rows: Vec<Vec<f64>> = (0..80).map(|i| vec![i as f64, (i * 7 % 11) as f64]).collect();
    let y: Vec<f64> = rows.iter().map(|r| r[0].sqrt() + r[1]).collect();
    let data = Dataset::from_rows(&rows, y).unwrap();
    let model = fit(&data, &config(30), None).unwrap();
    assert_eq!(model.task, TaskKind::Regression);
    let x = random_rows(50, 2, 6);
    assert_eq!(predict(&model, &x).unwrap(), predict_raw(&model, &x).unwrap()[0]);
    assert!(matches!(predict_proba(&model, &x), Err(MorphBoostError::Task(_))));
}

#[test]
fn fit_errors() {
    let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
    let constant = Dataset::from_rows(&rows, vec![1.0; 10]).unwrap();
    assert!(matches!(
        fit(&constant, &config(5), None),
        Err(MorphBoostError::DegenerateTarget(_))
    ));

    let data = two_blobs(40, 1);
    let wide = Dataset::from_rows(&vec![vec![0.0, 1.0, 2.0]; 4], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    assert!(matches!(
        fit(&data, &config(5), Some(&wide)),
        Err(MorphBoostError::Dimension { expected: 2, actual: 3 })
    ));
    assert!(matches!(
        predict(&fit(&data, &config(2), None).unwrap(), wide.features()),
        Err(MorphBoostError::Dimension { expected: 2, actual: 3 })
    ));
    let bad = TrainConfig {
        base_learning_rate: 0.0,
        ..TrainConfig::default()
    };
    assert!(matches!(fit(&data, &bad, None), Err(MorphBoostError::Config(_))));
}

#[test]
fn early_stopping_keeps_best_eval_loss() {
    let data = generate(&suite_spec("moons", 11).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // labels unrelated to the features: eval loss bottoms out early
    let noise: Vec<f64> = (0..200).map(|_| f64::from(u8::from(rng.gen::<bool>()))).collect();
    let eval = Dataset::from_columns(
        data.features().select_rows(&(0..200).collect::<Vec<_>>()).columns().to_vec(),
        noise,
    )
    .unwrap();
    let cfg = TrainConfig {
        early_stopping_rounds: Some(5),
        ..config(300)
    };
    let model = fit(&data, &cfg, Some(&eval)).unwrap();
    let best = model.best_iteration.unwrap();
    assert!(model.history.records.len() < 300);
    assert_eq!(model.n_iterations(), best + 1);

    let raw = predict_raw(&model, eval.features()).unwrap();
    let truncated_loss = losses::log_loss(&raw[0], eval.target());
    let recorded = model.history.records[best].eval_loss.unwrap();
    assert!((truncated_loss - recorded).abs() < 1e-12);
    let min = model
        .history
        .records
        .iter()
        .filter_map(|r| r.eval_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(recorded, min);
}

#[test]
fn patience_without_trigger_keeps_all_trees() {
    let data = two_blobs(80, 8);
    let cfg = TrainConfig {
        early_stopping_rounds: Some(50),
        ..config(10)
    };
    let model = fit(&data, &cfg, Some(&data)).unwrap();
    assert_eq!(model.trees.len(), 10);
    assert!(model.best_iteration.is_some());
}

#[test]
fn fits_are_deterministic() {
    let data = generate(&suite_spec("circles", 3).unwrap()).unwrap();
    let a = model_to_string(&fit(&data, &config(15), None).unwrap()).unwrap();
    let b = model_to_string(&fit(&data, &config(15), None).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn save_load_round_trip_on_random_rows() {
    let data = generate(&suite_spec("imbalanced4", 4).unwrap()).unwrap();
    let model = fit(&data, &config(10), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    morphboost::save_model(&model, &path).unwrap();
    let loaded = morphboost::load_model(&path).unwrap();
    let x = random_rows(100, 8, 9);
    let a = predict_proba(&model, &x).unwrap();
    let b = predict_proba(&loaded, &x).unwrap();
    for (ra, rb) in a.iter().zip(&b) {
        for (pa, pb) in ra.iter().zip(rb) {
            assert_eq!(pa.to_bits(), pb.to_bits());
        }
    }
    assert_eq!(predict(&model, &x).unwrap(), predict(&loaded, &x).unwrap());
    assert_eq!(model_to_string(&model).unwrap(), model_to_string(&loaded).unwrap());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(model_to_string(&model_from_str(&text).unwrap()).unwrap() + "\n", text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn proba_rows_agree_with_labels(seed in 0u64..1000, k in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 100;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let y: Vec<f64> = (0..n).map(|i| (i % k) as f64).collect();
        let data = Dataset::from_rows(&rows, y).unwrap();
        let model = fit(&data, &config(8), None).unwrap();
        let x = random_rows(40, 2, seed + 1);
        let proba = predict_proba(&model, &x).unwrap();
        let labels = predict(&model, &x).unwrap();
        for (p, label) in proba.iter().zip(&labels) {
            prop_assert_eq!(p.len(), k);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let mut arg = 0;
            for j in 1..k {
                if p[j] > p[arg] {
                    arg = j;
                }
            }
            prop_assert_eq!(*label, arg as f64);
        }
    }

    #[test]
    fn importance_is_a_distribution(seed in 0u64..1000, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 50;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() + rng.gen_range(-0.1..0.1)).collect();
        let model = fit(&Dataset::from_rows(&rows, y).unwrap(), &config(10), None).unwrap();
        prop_assert_eq!(model.importance.len(), d);
        prop_assert!(model.importance.iter().all(|&v| v >= 0.0));
        let has_split = model.trees.iter().any(|t| !t.root.is_leaf());
        let total: f64 = model.importance.iter().sum();
        if has_split {
            prop_assert!((total - 1.0).abs() <= 1e-9);
        } else {
            prop_assert_eq!(total, 0.0);
        }
    }
}
