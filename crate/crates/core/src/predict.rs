//! Tree evaluation.
//!
//! [`predict_tree_batch`] walks a tree level by level with a FIFO queue of
//! `(node, rows)` pairs, partitioning each node's row set in one pass instead
//! of descending the tree once per sample. [`predict_tree_recursive`] is the
//! plain per-row descent and serves as the reference.

use std::collections::VecDeque;

use crate::booster::BoosterModel;
use crate::data::FeatureMatrix;
use crate::error::{MorphBoostError, Result};
use crate::tree::{Tree, TreeNode};

fn check_dim(tree: &Tree, actual: usize) -> Result<()> {
    if tree.n_features != actual {
        return Err(MorphBoostError::Dimension {
            expected: tree.n_features,
            actual,
        });
    }
    Ok(())
}

/// Evaluates `tree` on every row of `features`.
pub fn predict_tree_batch(tree: &Tree, features: &FeatureMatrix) -> Result<Vec<f64>> {
    check_dim(tree, features.n_cols())?;
    let n = features.n_rows();
    let mut out = vec![0.0; n];
    #[cfg(debug_assertions)]
    let mut writes = vec![0u8; n];

    let mut queue: VecDeque<(&TreeNode, Vec<usize>)> = VecDeque::new();
    if n > 0 {
        queue.push_back((&tree.root, (0..n).collect()));
    }
    while let Some((node, rows)) = queue.pop_front() {
        match node {
            TreeNode::Leaf { value, .. } => {
                for &i in &rows {
                    out[i] = *value;
                    #[cfg(debug_assertions)]
                    {
                        writes[i] += 1;
                    }
                }
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let col = features.column(*feature);
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&i| col[i] <= *threshold);
                if !l.is_empty() {
                    queue.push_back((left, l));
                }
                if !r.is_empty() {
                    queue.push_back((right, r));
                }
            }
        }
    }
    #[cfg(debug_assertions)]
    debug_assert!(writes.iter().all(|&w| w == 1), "every row must reach exactly one leaf");
    Ok(out)
}

/// Root-to-leaf descent for a single row.
pub fn predict_tree_recursive(tree: &Tree, row: &[f64]) -> Result<f64> {
    check_dim(tree, row.len())?;
    fn descend(node: &TreeNode, row: &[f64]) -> f64 {
        match node {
            TreeNode::Leaf { value, .. } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                if row[*feature] <= *threshold {
                    descend(left, row)
                } else {
                    descend(right, row)
                }
            }
        }
    }
    Ok(descend(&tree.root, row))
}

/// Raw ensemble scores, output-major: `scores[k][i]` is output `k` for row
/// `i`. Regression and binary models have a single output.
pub fn predict_raw(model: &BoosterModel, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    let expected = model.n_features;
    if features.n_cols() != expected {
        return Err(MorphBoostError::Dimension {
            expected,
            actual: features.n_cols(),
        });
    }
    let base = model.base_score.values();
    if base.is_empty() {
        return Err(MorphBoostError::EmptyModel);
    }
    let n = features.n_rows();
    let mut scores: Vec<Vec<f64>> = base.iter().map(|&b| vec![b; n]).collect();
    for tree in &model.trees {
        let k = tree.class_index.unwrap_or(0);
        let contribution = predict_tree_batch(tree, features)?;
        for (s, c) in scores[k].iter_mut().zip(contribution) {
            *s += c;
        }
    }
    Ok(scores)
}
