//! Random forests of CART trees for appeal regression and up-scaler
//! classification, with seeded k-fold cross-validation.
//!
//! Each tree draws its bootstrap sample and feature subsets from its own
//! ChaCha stream (`seed`, stream = tree index), so results do not depend on
//! the number of worker threads.

mod cart;
mod cv;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalmetrics::MetricError;

pub use cart::{argmax_lowest, Node, Tree};
pub use cv::{
    cross_validate, cross_validate_grouped, detect_baseline, fold_assignment,
    group_fold_assignment, impute_median, write_cv_csv, CvResult, CvSample, DetectionResult,
    ImageVote, DEFAULT_FOLDS,
};

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("no training samples")]
    NoSamples,
    #[error("{rows} feature rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("expected {expected} features, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
    #[error("{n} samples (or groups) cannot fill {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ForestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Number of candidate features per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    Third,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Regression => MaxFeatures::Third,
            Task::Classification => MaxFeatures::Sqrt,
        }
    }

    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::Third => n_features / 3,
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` picks the task default (sqrt for classification, a third for regression).
    pub max_features: Option<MaxFeatures>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidConfig("min_samples_leaf must be at least 1".into()));
        }
        if self.max_features == Some(MaxFeatures::Fixed(0)) {
            return Err(ForestError::InvalidConfig("max_features must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Vec<f64>),
    Classification {
        labels: Vec<usize>,
        classes: Vec<String>,
    },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(y) => y.len(),
            Targets::Classification { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Regression(_) => Task::Regression,
            Targets::Classification { .. } => Task::Classification,
        }
    }

    /// Numeric view: the value, or the class index.
    pub fn value(&self, i: usize) -> f64 {
        match self {
            Targets::Regression(y) => y[i],
            Targets::Classification { labels, .. } => labels[i] as f64,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(y) => Targets::Regression(idx.iter().map(|&i| y[i]).collect()),
            Targets::Classification { labels, classes } => Targets::Classification {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: classes.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub task: Task,
    pub feature_names: Vec<String>,
    /// Class names for classification; empty for regression.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

fn check_inputs(x: &[Vec<f64>], targets: &Targets, n_features: usize) -> Result<()> {
    if x.is_empty() {
        return Err(ForestError::NoSamples);
    }
    if x.len() != targets.len() {
        return Err(ForestError::LengthMismatch {
            rows: x.len(),
            targets: targets.len(),
        });
    }
    for (r, row) in x.iter().enumerate() {
        if row.len() != n_features {
            return Err(ForestError::Shape {
                expected: n_features,
                got: row.len(),
            });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite { row: r, col: c });
        }
    }
    match targets {
        Targets::Regression(y) => {
            if let Some(r) = y.iter().position(|v| !v.is_finite()) {
                return Err(ForestError::NonFinite { row: r, col: n_features });
            }
        }
        Targets::Classification { labels, classes } => {
            if let Some(&label) = labels.iter().find(|&&l| l >= classes.len()) {
                return Err(ForestError::BadLabel {
                    label,
                    classes: classes.len(),
                });
            }
        }
    }
    Ok(())
}

/// RNG of tree `index` for a forest seeded with `seed`.
pub fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Fit a forest. Rows must be complete (impute first).
pub fn train(
    x: &[Vec<f64>],
    targets: &Targets,
    feature_names: &[String],
    cfg: &ForestConfig,
) -> Result<RandomForestModel> {
    cfg.validate()?;
    check_inputs(x, targets, feature_names.len())?;
    let task = targets.task();
    let params = cart::Params {
        max_depth: cfg.max_depth,
        min_samples_leaf: cfg.min_samples_leaf,
        mtry: cfg
            .max_features
            .unwrap_or(MaxFeatures::default_for(task))
            .resolve(feature_names.len()),
    };
    let labels = match targets {
        Targets::Regression(y) => cart::Labels::Regression(y),
        Targets::Classification { labels, classes } => cart::Labels::Classification {
            labels,
            classes: classes.len(),
        },
    };
    let n = x.len();
    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(cfg.seed, t);
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            cart::Grower::new(x, labels, &params, &mut rng).grow(rows)
        })
        .collect();
    Ok(RandomForestModel {
        task,
        feature_names: feature_names.to_vec(),
        classes: match targets {
            Targets::Classification { classes, .. } => classes.clone(),
            Targets::Regression(_) => Vec::new(),
        },
        config: cfg.clone(),
        trees,
    })
}

impl RandomForestModel {
    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.feature_names.len() {
            return Err(ForestError::Shape {
                expected: self.feature_names.len(),
                got: row.len(),
            });
        }
        Ok(())
    }

    /// Raw output of every tree.
    pub fn tree_outputs(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_row(row)?;
        Ok(self.trees.iter().map(|t| t.predict(row)).collect())
    }

    /// Per-class vote counts (classification only; empty for regression).
    pub fn votes(&self, row: &[f64]) -> Result<Vec<usize>> {
        let outs = self.tree_outputs(row)?;
        let mut v = vec![0usize; self.classes.len()];
        if self.task == Task::Classification {
            for o in outs {
                v[o as usize] += 1;
            }
        }
        Ok(v)
    }

    /// Mean of tree outputs for regression; the majority class index for
    /// classification, ties going to the lowest index.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        match self.task {
            Task::Regression => {
                let outs = self.tree_outputs(row)?;
                if outs.iter().all(|&o| o == outs[0]) {
                    return Ok(outs[0]);
                }
                Ok(outs.iter().sum::<f64>() / outs.len() as f64)
            }
            Task::Classification => Ok(argmax_lowest(&self.votes(row)?) as f64),
        }
    }

    pub fn predict_class(&self, row: &[f64]) -> Result<usize> {
        self.predict(row).map(|v| v as usize)
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    /// How often each feature is used for a split, over all trees.
    pub fn split_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.feature_names.len()];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, .. } = n {
                    c[*feature] += 1;
                }
            }
        }
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ForestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ForestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests;
