//! MorphBoost: gradient boosted decision trees whose split criterion morphs
//! over the course of training.
//!
//! The pipeline is:
//!
//! 1. [`fingerprint`] inspects the dataset (task kind, complexity, a few
//!    correlation statistics) and derives the effective tree depth.
//! 2. [`booster::fit`] runs the boosting loop. Each iteration computes
//!    gradients/Hessians ([`losses`]), folds them into the running gradient
//!    statistics ([`morph::MorphState`]) and grows one tree per output
//!    ([`tree::build_tree`]).
//! 3. [`predict`] evaluates trees with a breadth-first batch traversal.
//!
//! [`bench`] holds synthetic dataset generators and a small experiment runner.

pub mod bench;
pub mod booster;
pub mod data;
pub mod error;
pub mod fingerprint;
pub mod losses;
pub mod morph;
pub mod predict;
pub mod stats;
pub mod tree;

pub use booster::{
    feature_importance, fit, load_model, predict, predict_proba, save_model, BoosterModel,
    MorphHistory,
};
pub use data::{load_csv, load_feature_csv, stratified_split, Dataset, FeatureMatrix, TargetColumn, TaskKind, TrainConfig};
pub use error::{MorphBoostError, Result};
pub use fingerprint::ProblemFingerprint;
pub use tree::{Tree, TreeNode};
