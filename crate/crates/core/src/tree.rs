//! Growing a single morphing regression tree on gradient/Hessian pairs.
//!
//! Split search is exact over a per-node candidate set: every midpoint
//! between consecutive distinct values for low-cardinality features, a fixed
//! number of evenly spaced quantiles otherwise. Each feature keeps a presorted
//! row order that is stably partitioned as the tree grows, so no node sorts.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, TrainConfig};
use crate::fingerprint::ProblemFingerprint;
use crate::morph::MorphState;

/// Above this many unique values, quantile sampling applies in any mode.
pub const HIGH_CARDINALITY: usize = 256;
pub const HIGH_CARDINALITY_THRESHOLDS: usize = 32;
/// Above this many unique values, fast mode samples quantiles.
pub const FAST_MODE_CARDINALITY: usize = 64;
pub const FAST_MODE_THRESHOLDS: usize = 16;

/// Children holding less than this fraction of the node are penalized.
pub const BALANCE_RATIO: f64 = 0.1;
pub const BALANCE_DECAY_RATE: f64 = 5.0;
pub const DEPTH_SHRINK_BASE: f64 = 0.9;

const PARALLEL_WORK: usize = 32_768;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        /// Combined morph score of the two children this split creates.
        morph_score: f64,
        depth: usize,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
        n_samples: usize,
        depth: usize,
    },
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Split { depth, .. } | TreeNode::Leaf { depth, .. } => *depth,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }
}

/// One fitted tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub root: TreeNode,
    /// Unordered feature pairs `(a, b)` with `a < b` that occur as
    /// ancestor/descendant splits on some root-to-node path.
    pub interactions: BTreeSet<(usize, usize)>,
    /// Output column this tree contributes to (multiclass only).
    pub class_index: Option<usize>,
    /// Boosting iteration that produced the tree.
    pub iteration: usize,
    pub n_features: usize,
}

impl Tree {
    pub fn leaf(value: f64, n_samples: usize, n_features: usize) -> Self {
        Tree {
            root: TreeNode::Leaf {
                value,
                n_samples,
                depth: 0,
            },
            interactions: BTreeSet::new(),
            class_index: None,
            iteration: 0,
            n_features,
        }
    }

    /// Deepest node depth.
    pub fn depth(&self) -> usize {
        fn walk(node: &TreeNode) -> usize {
            match node {
                TreeNode::Leaf { depth, .. } => *depth,
                TreeNode::Split { left, right, .. } => walk(left).max(walk(right)),
            }
        }
        walk(&self.root)
    }

    pub fn n_nodes(&self) -> usize {
        fn walk(node: &TreeNode) -> usize {
            match node {
                TreeNode::Leaf { .. } => 1,
                TreeNode::Split { left, right, .. } => 1 + walk(left) + walk(right),
            }
        }
        walk(&self.root)
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Leaf { .. } => out.push(node),
                TreeNode::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// Checks structural invariants: child depth is parent depth + 1, the
    /// root is at depth 0, split features are in range, all values finite.
    pub fn check_structure(&self) -> Result<(), String> {
        fn walk(node: &TreeNode, expected: usize, d: usize) -> Result<(), String> {
            if node.depth() != expected {
                return Err(format!("node at depth {} expected {expected}", node.depth()));
            }
            match node {
                TreeNode::Leaf { value, .. } => {
                    if !value.is_finite() {
                        return Err("non-finite leaf value".into());
                    }
                }
                TreeNode::Split {
                    feature,
                    threshold,
                    gain,
                    morph_score,
                    left,
                    right,
                    ..
                } => {
                    if *feature >= d {
                        return Err(format!("split feature {feature} out of range for {d} features"));
                    }
                    if !(threshold.is_finite() && gain.is_finite() && morph_score.is_finite()) {
                        return Err("non-finite split field".into());
                    }
                    walk(left, expected + 1, d)?;
                    walk(right, expected + 1, d)?;
                }
            }
            Ok(())
        }
        walk(&self.root, 0, self.n_features)
    }
}

/// Candidate thresholds for one feature's values.
pub fn candidate_thresholds(values: &[f64], fast_mode: bool) -> Vec<f64> {
    thresholds_from_unique(&crate::stats::sorted_unique(values), fast_mode)
}

/// Same as [`candidate_thresholds`] for already sorted, distinct values.
pub fn thresholds_from_unique(unique: &[f64], fast_mode: bool) -> Vec<f64> {
    let u = unique.len();
    if u < 2 {
        return Vec::new();
    }
    let sampled = if u > HIGH_CARDINALITY {
        Some(HIGH_CARDINALITY_THRESHOLDS)
    } else if fast_mode && u > FAST_MODE_CARDINALITY {
        Some(FAST_MODE_THRESHOLDS)
    } else {
        None
    };
    match sampled {
        Some(m) => {
            let mut out: Vec<f64> = (1..=m)
                .map(|k| {
                    let pos = k as f64 / (m + 1) as f64 * (u - 1) as f64;
                    let lo = pos.floor() as usize;
                    let frac = pos - lo as f64;
                    if frac == 0.0 || lo + 1 >= u {
                        unique[lo]
                    } else {
                        unique[lo] + frac * (unique[lo + 1] - unique[lo])
                    }
                })
                .collect();
            out.dedup();
            out
        }
        None => unique
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                // adjacent floats can round the midpoint up onto the larger value
                if mid < w[1] {
                    mid
                } else {
                    w[0]
                }
            })
            .collect(),
    }
}

/// Per-iteration split cost `gamma0 * (1 + t/T)`.
pub fn complexity_penalty(state: &MorphState, config: &TrainConfig) -> f64 {
    config.gamma0 * (1.0 + state.iteration as f64 / state.total_iterations as f64)
}

/// Multiplier applied to a split's gain when its smaller child is under
/// [`BALANCE_RATIO`] of the node.
pub fn balance_factor(n_left: usize, n_right: usize) -> f64 {
    let ratio = n_left.min(n_right) as f64 / (n_left + n_right) as f64;
    if ratio < BALANCE_RATIO {
        (-BALANCE_DECAY_RATE * (BALANCE_RATIO - ratio) / BALANCE_RATIO).exp()
    } else {
        1.0
    }
}

/// Gradient, Hessian and information sums over a sample set.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeStats {
    pub sum_g: f64,
    pub sum_h: f64,
    pub sum_info: f64,
    pub count: usize,
}

impl NodeStats {
    #[inline]
    fn add(&mut self, g: f64, h: f64, info: f64) {
        self.sum_g += g;
        self.sum_h += h;
        self.sum_info += info;
        self.count += 1;
    }

    fn minus(&self, other: &NodeStats) -> NodeStats {
        NodeStats {
            sum_g: self.sum_g - other.sum_g,
            sum_h: self.sum_h - other.sum_h,
            sum_info: self.sum_info - other.sum_info,
            count: self.count - other.count,
        }
    }
}

/// Everything that fixes how candidate splits are scored for one tree.
struct SplitScorer<'a> {
    state: &'a MorphState,
    config: &'a TrainConfig,
    penalty: f64,
}

impl<'a> SplitScorer<'a> {
    fn new(state: &'a MorphState, config: &'a TrainConfig) -> Self {
        SplitScorer {
            state,
            config,
            penalty: complexity_penalty(state, config) + config.lambda_l1,
        }
    }

    fn blended(&self, s: &NodeStats) -> f64 {
        self.state
            .node_score(s.sum_g, s.sum_h, s.sum_info, self.config.lambda_l2)
            .blended
    }

    /// `None` when either child is below `min_samples_leaf`.
    #[inline]
    fn gain(&self, left: &NodeStats, right: &NodeStats, parent_score: f64) -> Option<f64> {
        let min_leaf = self.config.min_samples_leaf;
        if left.count < min_leaf || right.count < min_leaf {
            return None;
        }
        let mut gain = self.blended(left) + self.blended(right) - parent_score - self.penalty;
        if self.config.balance_penalty {
            gain *= balance_factor(left.count, right.count);
        }
        Some(gain)
    }
}

/// Gain of splitting the samples at `threshold` on one feature, or
/// `-inf` when a child would be empty or under `min_samples_leaf`.
pub fn evaluate_split(
    feature_values: &[f64],
    grad: &[f64],
    hess: &[f64],
    info: &[f64],
    threshold: f64,
    state: &MorphState,
    config: &TrainConfig,
) -> f64 {
    let mut left = NodeStats::default();
    let mut right = NodeStats::default();
    let mut parent = NodeStats::default();
    for i in 0..feature_values.len() {
        parent.add(grad[i], hess[i], info[i]);
        if feature_values[i] <= threshold {
            left.add(grad[i], hess[i], info[i]);
        } else {
            right.add(grad[i], hess[i], info[i]);
        }
    }
    if left.count == 0 || right.count == 0 {
        return f64::NEG_INFINITY;
    }
    let scorer = SplitScorer::new(state, config);
    scorer
        .gain(&left, &right, scorer.blended(&parent))
        .unwrap_or(f64::NEG_INFINITY)
}

/// Depth shrinkage `0.9^(depth/3)`.
pub fn depth_shrinkage(depth: usize) -> f64 {
    DEPTH_SHRINK_BASE.powf(depth as f64 / 3.0)
}

/// Leaf output: learning rate, depth shrinkage and late-training pressure
/// applied to the Newton step `-G / (H + λ)`.
pub fn leaf_value(
    sum_g: f64,
    sum_h: f64,
    depth: usize,
    learning_rate: f64,
    state: &MorphState,
    config: &TrainConfig,
) -> f64 {
    let denom = sum_h + config.lambda_l2;
    if denom <= 0.0 {
        return 0.0;
    }
    let depth_factor = if config.depth_shrinkage {
        depth_shrinkage(depth)
    } else {
        1.0
    };
    let progress = (state.iteration as f64 / state.total_iterations as f64).min(1.0);
    let pressure = 1.0 - state.evolution_pressure * progress;
    learning_rate * depth_factor * pressure * (-sum_g / denom)
}

/// Row order of every feature column sorted by value (ties by row index).
/// Computed once per dataset and shared by every tree of a fit.
#[derive(Debug, Clone)]
pub struct SortedColumns {
    orders: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(features: &FeatureMatrix) -> Self {
        let orders = features
            .columns()
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| {
                    col[a as usize]
                        .total_cmp(&col[b as usize])
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        SortedColumns { orders }
    }
}

struct Builder<'a> {
    features: &'a FeatureMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    info: Vec<f64>,
    scorer: SplitScorer<'a>,
    state: &'a MorphState,
    config: &'a TrainConfig,
    learning_rate: f64,
    max_depth: usize,
    interactions: BTreeSet<(usize, usize)>,
    goes_left: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: NodeStats,
    right: NodeStats,
}

impl<'a> Builder<'a> {
    fn node_stats(&self, rows: &[u32]) -> NodeStats {
        let mut s = NodeStats::default();
        for &r in rows {
            let r = r as usize;
            s.add(self.grad[r], self.hess[r], self.info[r]);
        }
        s
    }

    fn best_for_feature(
        &self,
        feature: usize,
        order: &[u32],
        parent: &NodeStats,
        parent_score: f64,
    ) -> Option<Candidate> {
        let col = self.features.column(feature);
        let mut unique: Vec<f64> = Vec::new();
        for &r in order {
            let v = col[r as usize];
            if unique.last() != Some(&v) {
                unique.push(v);
            }
        }
        let thresholds = thresholds_from_unique(&unique, self.config.fast_mode);
        let mut best: Option<Candidate> = None;
        let mut left = NodeStats::default();
        let mut pos = 0;
        for threshold in thresholds {
            while pos < order.len() && col[order[pos] as usize] <= threshold {
                let r = order[pos] as usize;
                left.add(self.grad[r], self.hess[r], self.info[r]);
                pos += 1;
            }
            if pos == 0 || pos == order.len() {
                continue;
            }
            let right = parent.minus(&left);
            if let Some(gain) = self.scorer.gain(&left, &right, parent_score) {
                if best.is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate {
                        feature,
                        threshold,
                        gain,
                        left,
                        right,
                    });
                }
            }
        }
        best
    }

    fn best_split(&self, orders: &[Vec<u32>], parent: &NodeStats) -> Option<Candidate> {
        let parent_score = self.scorer.blended(parent);
        let n = parent.count;
        let per_feature: Vec<Option<Candidate>> = if n * orders.len() >= PARALLEL_WORK {
            orders
                .par_iter()
                .enumerate()
                .map(|(j, order)| self.best_for_feature(j, order, parent, parent_score))
                .collect()
        } else {
            orders
                .iter()
                .enumerate()
                .map(|(j, order)| self.best_for_feature(j, order, parent, parent_score))
                .collect()
        };
        // in feature order, strict improvement only: ties keep the lowest feature
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if best.is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        best
    }

    fn make_leaf(&self, stats: &NodeStats, depth: usize) -> TreeNode {
        TreeNode::Leaf {
            value: leaf_value(
                stats.sum_g,
                stats.sum_h,
                depth,
                self.learning_rate,
                self.state,
                self.config,
            ),
            n_samples: stats.count,
            depth,
        }
    }

    /// `rows` are the node's samples in ascending row order; `orders[j]` the
    /// same samples sorted by feature `j`.
    fn grow(
        &mut self,
        rows: Vec<u32>,
        orders: Vec<Vec<u32>>,
        depth: usize,
        ancestors: &mut Vec<usize>,
    ) -> TreeNode {
        let stats = self.node_stats(&rows);
        if depth >= self.max_depth || rows.len() < 2 * self.config.min_samples_leaf {
            return self.make_leaf(&stats, depth);
        }
        let best = match self.best_split(&orders, &stats) {
            Some(c) if c.gain > 0.0 => c,
            _ => return self.make_leaf(&stats, depth),
        };

        let col = self.features.column(best.feature);
        for &r in &rows {
            self.goes_left[r as usize] = col[r as usize] <= best.threshold;
        }
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&r| self.goes_left[r as usize]);
        let mut left_orders = Vec::with_capacity(orders.len());
        let mut right_orders = Vec::with_capacity(orders.len());
        for order in orders {
            let (l, r): (Vec<u32>, Vec<u32>) =
                order.into_iter().partition(|&r| self.goes_left[r as usize]);
            left_orders.push(l);
            right_orders.push(r);
        }

        for &a in ancestors.iter() {
            if a != best.feature {
                self.interactions
                    .insert((a.min(best.feature), a.max(best.feature)));
            }
        }
        let morph_score = self.scorer.blended(&best.left) + self.scorer.blended(&best.right);

        ancestors.push(best.feature);
        let left = self.grow(left_rows, left_orders, depth + 1, ancestors);
        let right = self.grow(right_rows, right_orders, depth + 1, ancestors);
        ancestors.pop();

        TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            gain: best.gain,
            morph_score,
            depth,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Grows one tree with presorted columns supplied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn build_tree_sorted(
    features: &FeatureMatrix,
    sorted: &SortedColumns,
    grad: &[f64],
    hess: &[f64],
    state: &MorphState,
    learning_rate: f64,
    max_depth: usize,
    config: &TrainConfig,
) -> Tree {
    assert_eq!(grad.len(), features.n_rows());
    assert_eq!(hess.len(), features.n_rows());
    let (_, info) = state.per_sample_scores(grad, hess, config.lambda_l2);
    let mut builder = Builder {
        features,
        grad,
        hess,
        info,
        scorer: SplitScorer::new(state, config),
        state,
        config,
        learning_rate,
        max_depth,
        interactions: BTreeSet::new(),
        goes_left: vec![false; features.n_rows()],
    };
    let rows: Vec<u32> = (0..features.n_rows() as u32).collect();
    let root = builder.grow(rows, sorted.orders.clone(), 0, &mut Vec::new());
    Tree {
        root,
        interactions: builder.interactions,
        class_index: None,
        iteration: state.iteration,
        n_features: features.n_cols(),
    }
}

/// Grows one tree on `(grad, hess)` using the fingerprint's depth limit.
pub fn build_tree(
    features: &FeatureMatrix,
    grad: &[f64],
    hess: &[f64],
    state: &MorphState,
    learning_rate: f64,
    fingerprint: &ProblemFingerprint,
    config: &TrainConfig,
) -> Tree {
    let sorted = SortedColumns::new(features);
    build_tree_sorted(
        features,
        &sorted,
        grad,
        hess,
        state,
        learning_rate,
        fingerprint.effective_max_depth,
        config,
    )
}
