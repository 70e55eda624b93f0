use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::Serialize;
use uab_core::evalmetrics::{correlation_triple, ComparisonReport, CorrelationTriple, NamedCorrelation};
use uab_core::features::{read_feature_csv, FeatureName};
use uab_core::forest::{cross_validate, impute_median, train, write_cv_csv, ForestConfig, ForestError, Targets};

use super::{load_mos, or_default, require_file, write_csv, write_json, write_text, FEATURES_FILE, MOS_FILE};
use crate::config::RunConfig;
use crate::error::{Classify, CliError, Context, Status};
use crate::svg;

pub const MODEL_FILE: &str = "model.json";
pub const PREDICTIONS_FILE: &str = "cv_predictions.csv";
pub const REPORT_FILE: &str = "cv_report.json";

#[derive(Debug, Default)]
pub struct TrainArgs {
    pub features: Option<PathBuf>,
    pub mos: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub samples: usize,
    pub folds: usize,
    pub forest: ForestConfig,
    /// Out-of-fold predictions of the forest against MOS.
    pub combined: CorrelationTriple,
    /// Each feature on its own against MOS, best first.
    pub features: ComparisonReport,
    /// Fill values for missing features, in feature order.
    pub impute_medians: Vec<f64>,
    /// Splits per feature in the final model.
    pub split_counts: BTreeMap<String, usize>,
}

const MAX_LISTED: usize = 20;

fn orphan_error(only_features: &[&str], only_mos: &[&str]) -> CliError {
    let list = |v: &[&str]| {
        let mut s = v.iter().take(MAX_LISTED).copied().collect::<Vec<_>>().join(", ");
        if v.len() > MAX_LISTED {
            s.push_str(&format!(", ... ({} total)", v.len()));
        }
        s
    };
    let mut parts = Vec::new();
    if !only_features.is_empty() {
        parts.push(format!("without MOS: {}", list(only_features)));
    }
    if !only_mos.is_empty() {
        parts.push(format!("without features: {}", list(only_mos)));
    }
    CliError::usage_msg(format!("feature and MOS ids do not match; {}", parts.join("; ")))
}

fn forest_error(e: ForestError) -> CliError {
    match e {
        ForestError::TooFewSamples { .. } | ForestError::InvalidConfig(_) | ForestError::DuplicateId(_) => {
            CliError::Usage(e.into())
        }
        e => CliError::Runtime(e.into()),
    }
}

/// Per-feature correlation over the rows where the feature is present.
pub fn feature_correlations(rows: &[Vec<f64>], mos: &[f64]) -> Result<ComparisonReport, CliError> {
    let mut entries = Vec::new();
    for (j, name) in FeatureName::ALL.iter().enumerate() {
        let (t, p): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .zip(mos)
            .filter(|(r, _)| r[j].is_finite())
            .map(|(r, &m)| (m, r[j]))
            .unzip();
        if t.len() < 2 {
            log::warn!("{name}: fewer than two values, correlation skipped");
            continue;
        }
        entries.push(NamedCorrelation {
            name: name.as_str().to_string(),
            correlation: correlation_triple(&t, &p).runtime()?,
        });
    }
    Ok(ComparisonReport::new(entries))
}

/// Random-forest appeal regression from signal features, evaluated with
/// k-fold cross-validation, then refit on all data.
pub fn run(cfg: &RunConfig, args: &TrainArgs) -> Result<Status, CliError> {
    cfg.validate()?;
    let out = &cfg.paths.out;
    let features_path = or_default(args.features.as_ref(), out, FEATURES_FILE);
    let mos_path = or_default(args.mos.as_ref(), out, MOS_FILE);
    require_file(&features_path, "feature file")?;
    let rows = read_feature_csv(&features_path)
        .with_context(|| format!("reading {}", features_path.display()))
        .usage()?;
    let mos = load_mos(&mos_path)?;

    let feature_ids: BTreeSet<&str> = rows.iter().map(|r| r.stimulus_id.as_str()).collect();
    if feature_ids.len() != rows.len() {
        return Err(CliError::usage_msg(format!(
            "{}: duplicate stimulus ids",
            features_path.display()
        )));
    }
    let only_features: Vec<&str> = feature_ids
        .iter()
        .copied()
        .filter(|id| !mos.contains_key(*id))
        .collect();
    let only_mos: Vec<&str> = mos
        .keys()
        .map(String::as_str)
        .filter(|id| !feature_ids.contains(id))
        .collect();
    if !only_features.is_empty() || !only_mos.is_empty() {
        return Err(orphan_error(&only_features, &only_mos));
    }

    let ids: Vec<String> = rows.iter().map(|r| r.stimulus_id.clone()).collect();
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.to_row()).collect();
    let y: Vec<f64> = ids.iter().map(|id| mos[id]).collect();
    let names: Vec<String> = FeatureName::ALL.iter().map(|n| n.as_str().to_string()).collect();
    let forest = cfg.forest_config();
    let targets = Targets::Regression(y.clone());

    let pool = super::thread_pool(cfg.threads())?;
    let (cv, model, medians) = pool.install(|| -> Result<_, CliError> {
        let cv = cross_validate(&ids, &x, &targets, &names, &forest, cfg.folds).map_err(forest_error)?;
        let medians = impute_median(&x);
        let filled: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().zip(&medians).map(|(&v, &m)| if v.is_finite() { v } else { m }).collect())
            .collect();
        let model = train(&filled, &targets, &names, &forest).map_err(forest_error)?;
        Ok((cv, model, medians))
    })?;
    let combined = cv
        .correlation
        .ok_or_else(|| CliError::runtime_msg("regression run produced no correlation"))?;
    let report = TrainReport {
        samples: ids.len(),
        folds: cfg.folds,
        forest,
        combined,
        features: feature_correlations(&x, &y)?,
        impute_medians: medians,
        split_counts: names.iter().cloned().zip(model.split_counts()).collect(),
    };

    model.save(out.join(MODEL_FILE)).runtime()?;
    write_csv(&out.join(PREDICTIONS_FILE), |w| write_cv_csv(&cv, w))?;
    write_json(&out.join(REPORT_FILE), &report)?;
    let points: Vec<(f64, f64)> = cv.samples.iter().map(|s| (s.truth, s.prediction)).collect();
    let title = match combined.pearson {
        Some(r) => format!("Out-of-fold predictions (Pearson {r:.3})"),
        None => "Out-of-fold predictions (Pearson undefined)".to_string(),
    };
    write_text(
        &out.join("cv_scatter.svg"),
        &svg::scatter(&title, "MOS", "predicted MOS", &points, true),
    )?;
    match combined.pearson {
        Some(r) => log::info!("{}-fold out-of-fold Pearson {r:.4} over {} stimuli", cfg.folds, ids.len()),
        None => log::warn!("out-of-fold Pearson undefined (constant targets or predictions)"),
    }
    Ok(Status::Complete)
}
