//! k-fold cross-validation and the patch-level detection baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_lowest, train, ForestConfig, ForestError, Result, Targets, Task};
use crate::evalmetrics::{
    classification_report, correlation_triple, ClassificationReport, CorrelationTriple,
};
use crate::filters::median;

pub const DEFAULT_FOLDS: usize = 10;

/// Fold of each sample: ids are sorted, shuffled with `seed`, and dealt
/// round-robin, so the result does not depend on input order.
pub fn fold_assignment(ids: &[String], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || ids.len() < k {
        return Err(ForestError::TooFewSamples { n: ids.len(), k });
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    if let Some(w) = order.windows(2).find(|w| ids[w[0]] == ids[w[1]]) {
        return Err(ForestError::DuplicateId(ids[w[0]].clone()));
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; ids.len()];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(folds)
}

/// Like [`fold_assignment`] but over distinct groups; every member of a
/// group shares its fold.
pub fn group_fold_assignment(groups: &[String], k: usize, seed: u64) -> Result<Vec<usize>> {
    let unique: Vec<String> = groups
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let group_folds = fold_assignment(&unique, k, seed)?;
    let lookup: BTreeMap<&str, usize> = unique
        .iter()
        .map(String::as_str)
        .zip(group_folds)
        .collect();
    Ok(groups.iter().map(|g| lookup[g.as_str()]).collect())
}

/// Column medians over finite values; 0 for a column with none.
pub fn impute_median(rows: &[Vec<f64>]) -> Vec<f64> {
    let p = rows.first().map_or(0, Vec::len);
    (0..p)
        .map(|c| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[c]).filter(|v| v.is_finite()).collect();
            if v.is_empty() {
                0.0
            } else {
                median(&mut v)
            }
        })
        .collect()
}

fn fill(row: &[f64], medians: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(medians)
        .map(|(&v, &m)| if v.is_finite() { v } else { m })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSample {
    pub stimulus_id: String,
    pub fold: usize,
    /// Target value, or class index for classification.
    pub truth: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    /// Out-of-fold predictions ordered by stimulus id.
    pub samples: Vec<CvSample>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationTriple>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationReport>,
}

impl CvResult {
    pub fn pearson(&self) -> Option<f64> {
        self.correlation.and_then(|c| c.pearson)
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.classification.as_ref().map(|c| c.accuracy)
    }
}

fn run_folds(
    ids: &[String],
    folds: &[usize],
    x: &[Vec<f64>],
    targets: &Targets,
    feature_names: &[String],
    cfg: &ForestConfig,
    k: usize,
) -> Result<CvResult> {
    if x.len() != ids.len() || targets.len() != ids.len() {
        return Err(ForestError::LengthMismatch {
            rows: x.len(),
            targets: targets.len().min(ids.len()),
        });
    }
    // canonical order keeps bootstrap draws independent of input order
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let mut predictions = vec![f64::NAN; ids.len()];
    for fold in 0..k {
        let train_idx: Vec<usize> = order.iter().copied().filter(|&i| folds[i] != fold).collect();
        let test_idx: Vec<usize> = order.iter().copied().filter(|&i| folds[i] == fold).collect();
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(ForestError::TooFewSamples { n: ids.len(), k });
        }
        let train_raw: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
        let medians = impute_median(&train_raw);
        let train_x: Vec<Vec<f64>> = train_raw.iter().map(|r| fill(r, &medians)).collect();
        let model = train(
            &train_x,
            &targets.select(&train_idx),
            feature_names,
            &cfg.with_seed(cfg.seed.wrapping_add(fold as u64)),
        )?;
        for &i in &test_idx {
            predictions[i] = model.predict(&fill(&x[i], &medians))?;
        }
    }
    let samples: Vec<CvSample> = order
        .iter()
        .map(|&i| CvSample {
            stimulus_id: ids[i].clone(),
            fold: folds[i],
            truth: targets.value(i),
            prediction: predictions[i],
        })
        .collect();
    let truth: Vec<f64> = samples.iter().map(|s| s.truth).collect();
    let pred: Vec<f64> = samples.iter().map(|s| s.prediction).collect();
    let (correlation, classification, classes) = match targets {
        Targets::Regression(_) => (Some(correlation_triple(&truth, &pred)?), None, Vec::new()),
        Targets::Classification { classes, .. } => {
            let t: Vec<usize> = truth.iter().map(|&v| v as usize).collect();
            let p: Vec<usize> = pred.iter().map(|&v| v as usize).collect();
            (None, Some(classification_report(&t, &p, classes)?), classes.clone())
        }
    };
    Ok(CvResult {
        k,
        task: targets.task(),
        classes,
        samples,
        correlation,
        classification,
    })
}

/// k-fold cross-validation with per-fold seed `cfg.seed + fold` and
/// training-fold median imputation of non-finite features.
pub fn cross_validate(
    ids: &[String],
    x: &[Vec<f64>],
    targets: &Targets,
    feature_names: &[String],
    cfg: &ForestConfig,
    k: usize,
) -> Result<CvResult> {
    let folds = fold_assignment(ids, k, cfg.seed)?;
    run_folds(ids, &folds, x, targets, feature_names, cfg, k)
}

/// Cross-validation whose folds never split a group.
pub fn cross_validate_grouped(
    ids: &[String],
    groups: &[String],
    x: &[Vec<f64>],
    targets: &Targets,
    feature_names: &[String],
    cfg: &ForestConfig,
    k: usize,
) -> Result<CvResult> {
    if groups.len() != ids.len() {
        return Err(ForestError::LengthMismatch {
            rows: ids.len(),
            targets: groups.len(),
        });
    }
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(ForestError::DuplicateId(w[0].clone()));
    }
    let folds = group_fold_assignment(groups, k, cfg.seed)?;
    run_folds(ids, &folds, x, targets, feature_names, cfg, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageVote {
    pub image_id: String,
    pub truth: String,
    pub predicted: String,
    pub patches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub patch: CvResult,
    pub images: Vec<ImageVote>,
    pub image_accuracy: f64,
}

/// Classify patches by generating method, then majority-vote the patch
/// predictions per image. Folds never split a `fold_groups` value; pass the
/// image ids to group by image, or a coarser key such as the source id.
#[allow(clippy::too_many_arguments)]
pub fn detect_baseline(
    patch_ids: &[String],
    image_ids: &[String],
    fold_groups: &[String],
    x: &[Vec<f64>],
    labels: &[usize],
    classes: &[String],
    feature_names: &[String],
    cfg: &ForestConfig,
    k: usize,
) -> Result<DetectionResult> {
    let targets = Targets::Classification {
        labels: labels.to_vec(),
        classes: classes.to_vec(),
    };
    if image_ids.len() != patch_ids.len() {
        return Err(ForestError::LengthMismatch {
            rows: patch_ids.len(),
            targets: image_ids.len(),
        });
    }
    let patch = cross_validate_grouped(patch_ids, fold_groups, x, &targets, feature_names, cfg, k)?;
    let group_of: BTreeMap<&str, &str> = patch_ids
        .iter()
        .map(String::as_str)
        .zip(image_ids.iter().map(String::as_str))
        .collect();
    let mut tallies: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for s in &patch.samples {
        let t = tallies
            .entry(group_of[s.stimulus_id.as_str()])
            .or_insert_with(|| (vec![0; classes.len()], vec![0; classes.len()]));
        t.0[s.truth as usize] += 1;
        t.1[s.prediction as usize] += 1;
    }
    let images: Vec<ImageVote> = tallies
        .into_iter()
        .map(|(id, (truth, pred))| ImageVote {
            image_id: id.to_string(),
            truth: classes[argmax_lowest(&truth)].clone(),
            predicted: classes[argmax_lowest(&pred)].clone(),
            patches: truth.iter().sum(),
        })
        .collect();
    let correct = images.iter().filter(|v| v.truth == v.predicted).count();
    Ok(DetectionResult {
        image_accuracy: correct as f64 / images.len() as f64,
        patch,
        images,
    })
}

/// Out-of-fold predictions as `stimulus_id,truth,prediction`; class names
/// replace indices for classification.
pub fn write_cv_csv<W: Write>(result: &CvResult, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stimulus_id", "truth", "prediction"])?;
    for s in &result.samples {
        let cell = |v: f64| match result.task {
            Task::Regression => v.to_string(),
            Task::Classification => result.classes[v as usize].clone(),
        };
        w.write_record([s.stimulus_id.clone(), cell(s.truth), cell(s.prediction)])?;
    }
    w.flush()?;
    Ok(())
}
