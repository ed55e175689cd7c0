//! The boosting loop, inference entry points, feature importance and the
//! model file format.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureMatrix, TaskKind, TrainConfig};
use crate::error::{MorphBoostError, Result};
use crate::fingerprint::ProblemFingerprint;
use crate::losses::{self, BaseScore, GradHess};
use crate::morph::{learning_rate, MorphState};
use crate::predict::{predict_raw, predict_tree_batch};
use crate::stats::sorted_unique;
use crate::tree::{build_tree_sorted, SortedColumns, Tree, TreeNode};

pub const FORMAT_VERSION: u32 = 1;

/// Fraction of an ancestor split's importance credited to a descendant split
/// on a different feature.
pub const INTERACTION_CREDIT: f64 = 0.3;
/// Importance weight decay per tree level.
pub const IMPORTANCE_DEPTH_DECAY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub learning_rate: f64,
    pub mean_tree_depth: f64,
    #[serde(default)]
    pub eval_loss: Option<f64>,
}

/// One record per completed boosting iteration, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MorphHistory {
    pub records: Vec<HistoryRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoosterModel {
    pub task: TaskKind,
    pub n_features: usize,
    pub feature_names: Option<Vec<String>>,
    /// Original class values, indexed by encoded class (classification only).
    pub label_map: Option<Vec<f64>>,
    pub base_score: BaseScore,
    pub config: TrainConfig,
    pub fingerprint: ProblemFingerprint,
    /// Grouped by iteration; within an iteration, ordered by class.
    pub trees: Vec<Tree>,
    pub history: MorphHistory,
    pub importance: Vec<f64>,
    pub best_iteration: Option<usize>,
}

impl BoosterModel {
    /// Number of boosting iterations represented in `trees`.
    pub fn n_iterations(&self) -> usize {
        self.trees.iter().map(|t| t.iteration + 1).max().unwrap_or(0)
    }

    /// Training loss after the last retained iteration, or `None` for an
    /// empty ensemble.
    pub fn final_train_loss(&self) -> Option<f64> {
        let last = self.n_iterations().checked_sub(1)?;
        self.history
            .records
            .iter()
            .find(|r| r.iteration == last)
            .map(|r| r.train_loss)
    }
}

/// Target encoded for training.
enum EncodedTarget {
    Regression(Vec<f64>),
    Binary(Vec<f64>),
    Multiclass(Vec<usize>),
}

impl EncodedTarget {
    fn as_f64(&self) -> Vec<f64> {
        match self {
            EncodedTarget::Regression(y) | EncodedTarget::Binary(y) => y.clone(),
            EncodedTarget::Multiclass(l) => l.iter().map(|&c| c as f64).collect(),
        }
    }

    fn grad_hess(&self, scores: &[Vec<f64>]) -> Vec<GradHess> {
        match self {
            EncodedTarget::Regression(y) => vec![losses::regression_grad_hess(&scores[0], y)],
            EncodedTarget::Binary(y) => vec![losses::binary_grad_hess(&scores[0], y)],
            EncodedTarget::Multiclass(l) => losses::multiclass_grad_hess(scores, l),
        }
    }

    fn loss(&self, scores: &[Vec<f64>]) -> f64 {
        match self {
            EncodedTarget::Regression(y) => losses::squared_error(&scores[0], y),
            EncodedTarget::Binary(y) => losses::log_loss(&scores[0], y),
            EncodedTarget::Multiclass(l) => losses::cross_entropy(scores, l),
        }
    }
}

fn class_index(label_map: &[f64], value: f64) -> Option<usize> {
    label_map.iter().position(|&c| c == value)
}

fn encode(target: &[f64], task: &TaskKind, label_map: &[f64]) -> Result<EncodedTarget> {
    let lookup = |v: f64| {
        class_index(label_map, v).ok_or_else(|| {
            MorphBoostError::InvalidData(format!("label {v} not seen in training data"))
        })
    };
    Ok(match task {
        TaskKind::Regression => EncodedTarget::Regression(target.to_vec()),
        TaskKind::BinaryClassification => EncodedTarget::Binary(
            target
                .iter()
                .map(|&v| lookup(v).map(|c| c as f64))
                .collect::<Result<_>>()?,
        ),
        TaskKind::MulticlassClassification(_) => EncodedTarget::Multiclass(
            target.iter().map(|&v| lookup(v)).collect::<Result<_>>()?,
        ),
    })
}

fn add_tree_output(scores: &mut [f64], tree: &Tree, features: &FeatureMatrix) -> Result<()> {
    let out = predict_tree_batch(tree, features)?;
    for (s, v) in scores.iter_mut().zip(out) {
        *s += v;
    }
    Ok(())
}

/// Trains a model. With `eval_set` and `early_stopping_rounds`, training
/// stops once the evaluation loss has not improved for that many rounds and
/// the ensemble is cut back to the best iteration.
pub fn fit(train: &Dataset, config: &TrainConfig, eval_set: Option<&Dataset>) -> Result<BoosterModel> {
    config.validate()?;
    let fingerprint = ProblemFingerprint::compute(
        train,
        config.fast_mode,
        config.max_depth_override,
        config.seed,
    )?;
    let task = fingerprint.task;
    let label_map = task
        .is_classification()
        .then(|| sorted_unique(train.target()));
    let empty: Vec<f64> = Vec::new();
    let labels = label_map.as_deref().unwrap_or(&empty);
    let target = encode(train.target(), &task, labels)?;

    let eval = match eval_set {
        Some(ev) => {
            if ev.n_features() != train.n_features() {
                return Err(MorphBoostError::Dimension {
                    expected: train.n_features(),
                    actual: ev.n_features(),
                });
            }
            Some((ev, encode(ev.target(), &task, labels)?))
        }
        None => None,
    };

    let base_score = losses::init_base_score(&target.as_f64(), &task);
    let base = base_score.values();
    let n = train.n_samples();
    let mut scores: Vec<Vec<f64>> = base.iter().map(|&b| vec![b; n]).collect();
    let mut eval_scores: Vec<Vec<f64>> = eval
        .as_ref()
        .map(|(ev, _)| base.iter().map(|&b| vec![b; ev.n_samples()]).collect())
        .unwrap_or_default();

    let total = config.n_iterations;
    let mut states = vec![MorphState::from_config(config); task.n_outputs()];
    let sorted = SortedColumns::new(train.features());
    let mut trees: Vec<Tree> = Vec::with_capacity(total * task.n_outputs());
    let mut history = MorphHistory::default();

    let patience = config.early_stopping_rounds.filter(|_| eval.is_some());
    let mut best: Option<(usize, f64)> = None;
    let mut stale = 0usize;
    let mut stopped_early = false;

    for t in 0..total {
        let lr = learning_rate(t, total, config.base_learning_rate, config.adaptive_lr);
        let grads = target.grad_hess(&scores);
        let mut depth_sum = 0usize;
        for (k, gh) in grads.iter().enumerate() {
            let state = &mut states[k];
            state.iteration = t;
            state.update_stats(&gh.grad);
            let mut tree = build_tree_sorted(
                train.features(),
                &sorted,
                &gh.grad,
                &gh.hess,
                state,
                lr,
                fingerprint.effective_max_depth,
                config,
            );
            if matches!(task, TaskKind::MulticlassClassification(_)) {
                tree.class_index = Some(k);
            }
            add_tree_output(&mut scores[k], &tree, train.features())?;
            if let Some((ev, _)) = &eval {
                add_tree_output(&mut eval_scores[k], &tree, ev.features())?;
            }
            depth_sum += tree.depth();
            trees.push(tree);
        }

        let eval_loss = eval.as_ref().map(|(_, y)| y.loss(&eval_scores));
        history.records.push(HistoryRecord {
            iteration: t,
            train_loss: target.loss(&scores),
            learning_rate: lr,
            mean_tree_depth: depth_sum as f64 / grads.len() as f64,
            eval_loss,
        });

        if let (Some(rounds), Some(loss)) = (patience, eval_loss) {
            if best.is_none_or(|(_, b)| loss < b) {
                best = Some((t, loss));
                stale = 0;
            } else {
                stale += 1;
                if stale >= rounds {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let best_iteration = best.map(|(t, _)| t);
    if stopped_early {
        let keep = best_iteration.expect("early stop implies a best iteration");
        trees.retain(|tree| tree.iteration <= keep);
    }

    let mut model = BoosterModel {
        task,
        n_features: train.n_features(),
        feature_names: train.feature_names().map(<[String]>::to_vec),
        label_map,
        base_score,
        config: config.clone(),
        fingerprint,
        trees,
        history,
        importance: Vec::new(),
        best_iteration,
    };
    model.importance = feature_importance(&model);
    Ok(model)
}

/// Predicted values: regression outputs, or original class labels.
pub fn predict(model: &BoosterModel, features: &FeatureMatrix) -> Result<Vec<f64>> {
    let raw = predict_raw(model, features)?;
    let label = |idx: usize| {
        model
            .label_map
            .as_ref()
            .and_then(|m| m.get(idx).copied())
            .unwrap_or(idx as f64)
    };
    Ok(match model.task {
        TaskKind::Regression => raw.into_iter().next().unwrap_or_default(),
        TaskKind::BinaryClassification => raw[0]
            .iter()
            .map(|&f| label(usize::from(losses::sigmoid(f) > 0.5)))
            .collect(),
        TaskKind::MulticlassClassification(_) => (0..features.n_rows())
            .map(|i| {
                let row: Vec<f64> = raw.iter().map(|c| c[i]).collect();
                let p = losses::softmax(&row);
                let mut arg = 0;
                for (k, &v) in p.iter().enumerate() {
                    if v > p[arg] {
                        arg = k;
                    }
                }
                label(arg)
            })
            .collect(),
    })
}

/// Class probabilities, one row per sample, columns in label-map order.
pub fn predict_proba(model: &BoosterModel, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    let raw = predict_raw(model, features)?;
    match model.task {
        TaskKind::Regression => Err(MorphBoostError::Task(
            "probabilities are only defined for classification models".into(),
        )),
        TaskKind::BinaryClassification => Ok(raw[0]
            .iter()
            .map(|&f| {
                let p = losses::sigmoid(f);
                vec![1.0 - p, p]
            })
            .collect()),
        TaskKind::MulticlassClassification(_) => Ok((0..features.n_rows())
            .map(|i| {
                let row: Vec<f64> = raw.iter().map(|c| c[i]).collect();
                losses::softmax(&row)
            })
            .collect()),
    }
}

/// Importance contribution of every split: `(depth, feature, contribution)`
/// in preorder, where contribution is traversal weight × morph score × gain
/// and the traversal weight starts at the tree's iteration weight and decays
/// by 0.9 per level.
pub fn split_contributions(tree: &Tree, total_iterations: usize) -> Vec<(usize, usize, f64)> {
    fn walk(node: &TreeNode, weight: f64, out: &mut Vec<(usize, usize, f64)>) {
        if let TreeNode::Split {
            feature,
            gain,
            morph_score,
            depth,
            left,
            right,
            ..
        } = node
        {
            out.push((*depth, *feature, weight * morph_score * gain));
            walk(left, weight * IMPORTANCE_DEPTH_DECAY, out);
            walk(right, weight * IMPORTANCE_DEPTH_DECAY, out);
        }
    }
    let mut out = Vec::new();
    walk(&tree.root, tree_weight(tree.iteration, total_iterations), &mut out);
    out
}

/// Iteration weight `1 + 0.5 t / T`.
pub fn tree_weight(iteration: usize, total_iterations: usize) -> f64 {
    1.0 + 0.5 * iteration as f64 / total_iterations.max(1) as f64
}

/// Normalized split importance with interaction credit. Each split adds its
/// contribution to its own feature, plus 0.3 of every ancestor split's
/// contribution when the ancestor's feature forms a recorded interaction pair
/// with it. Zero vector when the model has no splits.
pub fn feature_importance(model: &BoosterModel) -> Vec<f64> {
    fn walk(
        node: &TreeNode,
        weight: f64,
        path: &mut Vec<(usize, f64)>,
        interactions: &BTreeSet<(usize, usize)>,
        acc: &mut [f64],
    ) {
        if let TreeNode::Split {
            feature,
            gain,
            morph_score,
            left,
            right,
            ..
        } = node
        {
            let contribution = weight * morph_score * gain;
            acc[*feature] += contribution;
            for &(ancestor, ancestor_contribution) in path.iter() {
                let pair = (ancestor.min(*feature), ancestor.max(*feature));
                if ancestor != *feature && interactions.contains(&pair) {
                    acc[*feature] += INTERACTION_CREDIT * ancestor_contribution;
                }
            }
            path.push((*feature, contribution));
            walk(left, weight * IMPORTANCE_DEPTH_DECAY, path, interactions, acc);
            walk(right, weight * IMPORTANCE_DEPTH_DECAY, path, interactions, acc);
            path.pop();
        }
    }

    let mut acc = vec![0.0; model.n_features];
    for tree in &model.trees {
        let weight = tree_weight(tree.iteration, model.config.n_iterations);
        walk(&tree.root, weight, &mut Vec::new(), &tree.interactions, &mut acc);
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        for v in &mut acc {
            *v /= total;
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum NodeKind {
    Split,
    Leaf,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    kind: NodeKind,
    feature: usize,
    threshold: f64,
    gain: f64,
    morph_score: f64,
    value: f64,
    n_samples: usize,
    left: Option<usize>,
    right: Option<usize>,
    depth: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeRecord {
    iteration: usize,
    class_index: Option<usize>,
    interactions: Vec<(usize, usize)>,
    nodes: Vec<NodeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    task: TaskKind,
    n_features: usize,
    feature_names: Option<Vec<String>>,
    label_map: Option<Vec<f64>>,
    base_score: BaseScore,
    best_iteration: Option<usize>,
    config: TrainConfig,
    fingerprint: ProblemFingerprint,
    importance: Vec<f64>,
    history: MorphHistory,
    trees: Vec<TreeRecord>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn flatten(node: &TreeNode, out: &mut Vec<NodeRecord>) -> usize {
    let idx = out.len();
    match node {
        TreeNode::Leaf {
            value,
            n_samples,
            depth,
        } => out.push(NodeRecord {
            kind: NodeKind::Leaf,
            feature: 0,
            threshold: 0.0,
            gain: 0.0,
            morph_score: 0.0,
            value: *value,
            n_samples: *n_samples,
            left: None,
            right: None,
            depth: *depth,
        }),
        TreeNode::Split {
            feature,
            threshold,
            gain,
            morph_score,
            depth,
            left,
            right,
        } => {
            out.push(NodeRecord {
                kind: NodeKind::Split,
                feature: *feature,
                threshold: *threshold,
                gain: *gain,
                morph_score: *morph_score,
                value: 0.0,
                n_samples: 0,
                left: None,
                right: None,
                depth: *depth,
            });
            let l = flatten(left, out);
            let r = flatten(right, out);
            out[idx].left = Some(l);
            out[idx].right = Some(r);
        }
    }
    idx
}

fn unflatten(nodes: &[NodeRecord], idx: usize, seen: &mut [bool]) -> Result<TreeNode> {
    let bad = |msg: String| MorphBoostError::Format(msg);
    let rec = nodes
        .get(idx)
        .ok_or_else(|| bad(format!("node index {idx} out of range")))?;
    if std::mem::replace(&mut seen[idx], true) {
        return Err(bad(format!("node {idx} referenced twice")));
    }
    Ok(match rec.kind {
        NodeKind::Leaf => TreeNode::Leaf {
            value: rec.value,
            n_samples: rec.n_samples,
            depth: rec.depth,
        },
        NodeKind::Split => {
            let (Some(l), Some(r)) = (rec.left, rec.right) else {
                return Err(bad(format!("split node {idx} is missing a child")));
            };
            if l <= idx || r <= idx {
                return Err(bad(format!("split node {idx} has a backward child link")));
            }
            TreeNode::Split {
                feature: rec.feature,
                threshold: rec.threshold,
                gain: rec.gain,
                morph_score: rec.morph_score,
                depth: rec.depth,
                left: Box::new(unflatten(nodes, l, seen)?),
                right: Box::new(unflatten(nodes, r, seen)?),
            }
        }
    })
}

fn tree_to_record(tree: &Tree) -> TreeRecord {
    let mut nodes = Vec::with_capacity(tree.n_nodes());
    flatten(&tree.root, &mut nodes);
    TreeRecord {
        iteration: tree.iteration,
        class_index: tree.class_index,
        interactions: tree.interactions.iter().copied().collect(),
        nodes,
    }
}

fn record_to_tree(rec: TreeRecord, n_features: usize, n_outputs: usize) -> Result<Tree> {
    if rec.nodes.is_empty() {
        return Err(MorphBoostError::Format("tree with no nodes".into()));
    }
    if let Some(k) = rec.class_index {
        if k >= n_outputs {
            return Err(MorphBoostError::Format(format!("class index {k} out of range")));
        }
    }
    let mut seen = vec![false; rec.nodes.len()];
    let root = unflatten(&rec.nodes, 0, &mut seen)?;
    if seen.iter().any(|s| !s) {
        return Err(MorphBoostError::Format("unreachable node in tree".into()));
    }
    let tree = Tree {
        root,
        interactions: rec.interactions.into_iter().collect(),
        class_index: rec.class_index,
        iteration: rec.iteration,
        n_features,
    };
    tree.check_structure().map_err(MorphBoostError::Format)?;
    Ok(tree)
}

/// Serializes a model to its JSON document.
pub fn model_to_string(model: &BoosterModel) -> Result<String> {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        task: model.task,
        n_features: model.n_features,
        feature_names: model.feature_names.clone(),
        label_map: model.label_map.clone(),
        base_score: model.base_score.clone(),
        best_iteration: model.best_iteration,
        config: model.config.clone(),
        fingerprint: model.fingerprint.clone(),
        importance: model.importance.clone(),
        history: model.history.clone(),
        trees: model.trees.iter().map(tree_to_record).collect(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| MorphBoostError::Format(e.to_string()))
}

/// Parses a model document produced by [`model_to_string`].
pub fn model_from_str(text: &str) -> Result<BoosterModel> {
    let probe: VersionProbe = serde_json::from_str(text)
        .map_err(|e| MorphBoostError::Format(format!("unreadable model: {e}")))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(MorphBoostError::Format(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            probe.format_version
        )));
    }
    let file: ModelFile = serde_json::from_str(text)
        .map_err(|e| MorphBoostError::Format(format!("corrupt model: {e}")))?;
    let n_outputs = file.task.n_outputs();
    if file.base_score.values().len() != n_outputs {
        return Err(MorphBoostError::Format("base score does not match task".into()));
    }
    if file.importance.len() != file.n_features {
        return Err(MorphBoostError::Format("importance length mismatch".into()));
    }
    let trees = file
        .trees
        .into_iter()
        .map(|t| record_to_tree(t, file.n_features, n_outputs))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoosterModel {
        task: file.task,
        n_features: file.n_features,
        feature_names: file.feature_names,
        label_map: file.label_map,
        base_score: file.base_score,
        config: file.config,
        fingerprint: file.fingerprint,
        trees,
        history: file.history,
        importance: file.importance,
        best_iteration: file.best_iteration,
    })
}

/// Writes the model atomically: a temporary file in the target directory is
/// renamed over `path` once fully written.
pub fn save_model(model: &BoosterModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = model_to_string(model)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e| MorphBoostError::io(path, e);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(text.as_bytes()).map_err(io)?;
    tmp.write_all(b"\n").map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BoosterModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MorphBoostError::io(path, e))?;
    model_from_str(&text)
}
