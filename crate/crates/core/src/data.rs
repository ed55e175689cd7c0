//! Datasets, CSV ingestion, train/test splitting and the training configuration.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MorphBoostError, Result};

/// Dense column-major feature matrix: `columns[j][i]` is feature `j` of row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    /// Builds a matrix from columns. All columns must have the same length
    /// and contain only finite values.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, Vec::len);
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n_rows {
                return Err(MorphBoostError::InvalidData(format!(
                    "column {j} has {} rows, expected {n_rows}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(MorphBoostError::InvalidData(format!(
                    "non-finite value at row {i}, column {j}"
                )));
            }
        }
        Ok(FeatureMatrix { n_rows, columns })
    }

    /// Builds a matrix from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(rows.len()); n_cols];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(MorphBoostError::InvalidData(format!(
                    "row {i} has {} values, expected {n_cols}",
                    row.len()
                )));
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        let mut m = Self::from_columns(columns)?;
        m.n_rows = rows.len();
        Ok(m)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Rows `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            n_rows: indices.len(),
            columns: self
                .columns
                .iter()
                .map(|c| indices.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }
}

/// Feature matrix plus target. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: FeatureMatrix,
    target: Vec<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        features: FeatureMatrix,
        target: Vec<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if features.n_cols() == 0 {
            return Err(MorphBoostError::InvalidData("dataset has no features".into()));
        }
        if features.n_rows() == 0 {
            return Err(MorphBoostError::InvalidData("dataset has no samples".into()));
        }
        if target.len() != features.n_rows() {
            return Err(MorphBoostError::InvalidData(format!(
                "target has {} values but features have {} rows",
                target.len(),
                features.n_rows()
            )));
        }
        if let Some(i) = target.iter().position(|v| !v.is_finite()) {
            return Err(MorphBoostError::InvalidData(format!(
                "non-finite target at row {i}"
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != features.n_cols() {
                return Err(MorphBoostError::InvalidData(format!(
                    "{} feature names for {} features",
                    names.len(),
                    features.n_cols()
                )));
            }
        }
        Ok(Dataset {
            features,
            target,
            feature_names,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], target: Vec<f64>) -> Result<Self> {
        Self::new(FeatureMatrix::from_rows(rows)?, target, None)
    }

    pub fn from_columns(columns: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        Self::new(FeatureMatrix::from_columns(columns)?, target, None)
    }

    pub fn n_samples(&self) -> usize {
        self.features.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_cols()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Subset of rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            target: indices.iter().map(|&i| self.target[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Writes the dataset as CSV with a header row; the target is the last
    /// column and is named `target_name`. Floats are written in shortest
    /// round-trip form so reloading is bit-exact.
    pub fn write_csv(&self, path: impl AsRef<Path>, target_name: &str) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| MorphBoostError::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut header: Vec<String> = match &self.feature_names {
            Some(names) => names.clone(),
            None => (0..self.n_features()).map(|j| format!("x{j}")).collect(),
        };
        header.push(target_name.to_string());
        let io = |e| MorphBoostError::io(path, e);
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for i in 0..self.n_samples() {
            let mut line = String::new();
            for j in 0..self.n_features() {
                line.push_str(&format!("{:?},", self.features.get(i, j)));
            }
            line.push_str(&format!("{:?}", self.target[i]));
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Which column of a CSV file holds the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
}

impl From<&str> for TargetColumn {
    fn from(s: &str) -> Self {
        TargetColumn::Name(s.to_string())
    }
}

impl From<usize> for TargetColumn {
    fn from(i: usize) -> Self {
        TargetColumn::Index(i)
    }
}

fn parse_cell(cell: &str, row: usize, column: usize) -> Result<f64> {
    let trimmed = cell.trim();
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(MorphBoostError::Parse {
            row,
            column,
            message: format!("non-finite value {trimmed:?}"),
        }),
        Err(_) => Err(MorphBoostError::Parse {
            row,
            column,
            message: format!("cannot parse {trimmed:?} as a number"),
        }),
    }
}

/// Reads a numeric CSV. Every column other than the target becomes a feature,
/// in file order.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: impl Into<TargetColumn>,
    has_header: bool,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| MorphBoostError::io(path, e))?;
    read_csv(file, target.into(), has_header)
}

/// Header (if any), parsed rows and row width of a numeric CSV.
type Table = (Option<Vec<String>>, Vec<Vec<f64>>, usize);

fn read_table<R: std::io::Read>(reader: R, has_header: bool) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_reader(reader);

    let header: Option<Vec<String>> = if has_header {
        let h = rdr.headers().map_err(|e| MorphBoostError::Parse {
            row: 1,
            column: 0,
            message: e.to_string(),
        })?;
        Some(h.iter().map(|s| s.trim().to_string()).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            MorphBoostError::Parse {
                row,
                column: 0,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(rows.len() + 1, |p| p.line() as usize);
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(MorphBoostError::Parse {
                row: line,
                column: record.len().min(expected),
                message: format!("ragged row: {} fields, expected {expected}", record.len()),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| parse_cell(cell, line, j))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let width = width.unwrap_or(0);
    Ok((header, rows, width))
}

/// Reads a numeric CSV from any reader. See [`load_csv`].
pub fn read_csv<R: std::io::Read>(
    reader: R,
    target: TargetColumn,
    has_header: bool,
) -> Result<Dataset> {
    let (header, rows, width) = read_table(reader, has_header)?;
    let target_idx = match &target {
        TargetColumn::Index(i) => *i,
        TargetColumn::Name(name) => match &header {
            Some(h) => h.iter().position(|c| c == name).ok_or_else(|| {
                MorphBoostError::Schema(format!("target column {name:?} not found in header"))
            })?,
            None => {
                return Err(MorphBoostError::Schema(format!(
                    "target column {name:?} given by name but the file has no header"
                )))
            }
        },
    };
    if target_idx >= width {
        return Err(MorphBoostError::Schema(format!(
            "target column index {target_idx} out of range for {width} columns"
        )));
    }
    if width < 2 {
        return Err(MorphBoostError::Schema(
            "no feature columns besides the target".into(),
        ));
    }
    if rows.is_empty() {
        return Err(MorphBoostError::Schema("file contains no data rows".into()));
    }

    let mut columns = vec![Vec::with_capacity(rows.len()); width - 1];
    let mut target_values = Vec::with_capacity(rows.len());
    for row in &rows {
        let mut c = 0;
        for (j, &v) in row.iter().enumerate() {
            if j == target_idx {
                target_values.push(v);
            } else {
                columns[c].push(v);
                c += 1;
            }
        }
    }
    let names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(j, _)| *j != target_idx)
            .map(|(_, n)| n)
            .collect()
    });
    Dataset::new(FeatureMatrix::from_columns(columns)?, target_values, names)
}

/// Reads a CSV in which every column is a feature. Returns the matrix and
/// the header names, if the file has a header.
pub fn read_feature_csv<R: std::io::Read>(
    reader: R,
    has_header: bool,
) -> Result<(FeatureMatrix, Option<Vec<String>>)> {
    let (header, rows, width) = read_table(reader, has_header)?;
    if width == 0 {
        return Err(MorphBoostError::Schema("file has no columns".into()));
    }
    if rows.is_empty() {
        return Err(MorphBoostError::Schema("file contains no data rows".into()));
    }
    Ok((FeatureMatrix::from_rows(&rows)?, header))
}

pub fn load_feature_csv(
    path: impl AsRef<Path>,
    has_header: bool,
) -> Result<(FeatureMatrix, Option<Vec<String>>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| MorphBoostError::io(path, e))?;
    read_feature_csv(file, has_header)
}

/// How [`stratified_split`] partitions rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    /// Per-class proportional split (classification).
    Stratified,
    /// Plain shuffled split (regression).
    Random,
}

impl SplitKind {
    pub fn for_task(task: &TaskKind) -> Self {
        match task {
            TaskKind::Regression => SplitKind::Random,
            _ => SplitKind::Stratified,
        }
    }
}

fn test_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Splits into `(train, test)`. Both outputs keep the original relative row
/// order. Deterministic given `seed`.
pub fn stratified_split(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
    kind: SplitKind,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(MorphBoostError::Split(format!(
            "test fraction {test_fraction} not in (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_idx = Vec::new();

    match kind {
        SplitKind::Stratified => {
            let mut classes: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, &y) in data.target().iter().enumerate() {
                let key = if y == 0.0 { 0.0f64 } else { y };
                classes.entry(key.to_bits()).or_default().push(i);
            }
            // BTreeMap over raw bits is deterministic, which is all the order needs.
            for (bits, mut members) in classes {
                if members.len() < 2 {
                    return Err(MorphBoostError::Split(format!(
                        "class {} has {} sample(s); stratification needs at least 2",
                        f64::from_bits(bits),
                        members.len()
                    )));
                }
                members.shuffle(&mut rng);
                let k = test_count(members.len(), test_fraction);
                test_idx.extend_from_slice(&members[..k]);
            }
        }
        SplitKind::Random => {
            let n = data.n_samples();
            if n < 2 {
                return Err(MorphBoostError::Split("need at least 2 samples".into()));
            }
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            test_idx.extend_from_slice(&all[..test_count(n, test_fraction)]);
        }
    }

    let mut in_test = vec![false; data.n_samples()];
    for &i in &test_idx {
        in_test[i] = true;
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..data.n_samples()).partition(|&i| in_test[i]);
    Ok((data.subset(&train), data.subset(&test)))
}

/// The learning task, detected from the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BinaryClassification,
    /// Number of classes, at least 3.
    MulticlassClassification(usize),
    Regression,
}

impl TaskKind {
    /// Number of raw score outputs per sample.
    pub fn n_outputs(&self) -> usize {
        match self {
            TaskKind::MulticlassClassification(k) => *k,
            _ => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, TaskKind::Regression)
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::BinaryClassification => "binary",
            TaskKind::MulticlassClassification(_) => "multiclass",
            TaskKind::Regression => "regression",
        }
    }
}

/// Training hyperparameters.
///
/// The fields after `seed` control the morphing machinery and default to the
/// full algorithm; tests switch them off to compare against a plain
/// second-order booster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_iterations: usize,
    pub base_learning_rate: f64,
    pub lambda_l2: f64,
    pub lambda_l1: f64,
    pub evolution_pressure: f64,
    pub ema_decay: f64,
    pub fast_mode: bool,
    pub adaptive_lr: bool,
    pub max_depth_override: Option<usize>,
    pub min_samples_leaf: usize,
    pub early_stopping_rounds: Option<usize>,
    pub seed: u64,
    /// Base split cost; the per-iteration cost grows as `gamma0 * (1 + t/T)`.
    pub gamma0: f64,
    /// Weight of the information score once morphing is active.
    pub info_weight: f64,
    /// Down-weight splits whose smaller child holds under 10% of the node.
    pub balance_penalty: bool,
    /// Apply the `0.9^(depth/3)` leaf shrinkage.
    pub depth_shrinkage: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_iterations: 100,
            base_learning_rate: 0.1,
            lambda_l2: 1.0,
            lambda_l1: 0.0,
            evolution_pressure: 0.1,
            ema_decay: 0.05,
            fast_mode: true,
            adaptive_lr: true,
            max_depth_override: None,
            min_samples_leaf: 1,
            early_stopping_rounds: None,
            seed: 42,
            gamma0: 0.1,
            info_weight: 0.3,
            balance_penalty: true,
            depth_shrinkage: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(MorphBoostError::Config(msg.to_string()))
            }
        }
        check(
            self.base_learning_rate.is_finite() && self.base_learning_rate > 0.0,
            "base_learning_rate must be > 0",
        )?;
        check(
            self.lambda_l2.is_finite() && self.lambda_l2 >= 0.0,
            "lambda_l2 must be >= 0",
        )?;
        check(
            self.lambda_l1.is_finite() && self.lambda_l1 >= 0.0,
            "lambda_l1 must be >= 0",
        )?;
        check(
            self.evolution_pressure.is_finite() && self.evolution_pressure >= 0.0,
            "evolution_pressure must be >= 0",
        )?;
        check(
            self.ema_decay > 0.0 && self.ema_decay < 1.0,
            "ema_decay must be in (0, 1)",
        )?;
        check(self.min_samples_leaf >= 1, "min_samples_leaf must be >= 1")?;
        check(
            self.early_stopping_rounds != Some(0),
            "early_stopping_rounds must be >= 1",
        )?;
        check(
            self.gamma0.is_finite() && self.gamma0 >= 0.0,
            "gamma0 must be >= 0",
        )?;
        check(
            self.info_weight.is_finite() && self.info_weight >= 0.0,
            "info_weight must be >= 0",
        )?;
        Ok(())
    }

    /// Returns the config if it passes [`TrainConfig::validate`].
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }
}
