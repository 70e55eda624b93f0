use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use uab_core::evalmetrics::{write_confusion_csv, ClassificationReport};
use uab_core::features::{extract_features, FeatureName, FeatureVector};
use uab_core::forest::{detect_baseline, ImageVote};
use uab_core::imaging::{self, extract_patches};
use uab_core::upscalers::{ManifestEntry, SOURCE_METHOD};

use super::features::load_manifest;
use super::{or_default, thread_pool, write_csv, write_json, write_text, MANIFEST_FILE};
use crate::config::{FoldGroup, RunConfig};
use crate::error::{CliError, Status};
use crate::svg;

pub const PATCH_FEATURES_FILE: &str = "patch_features.csv";
pub const PREDICTIONS_FILE: &str = "detection_predictions.csv";
pub const REPORT_FILE: &str = "detection_report.json";

#[derive(Debug, Default)]
pub struct DetectArgs {
    pub manifest: Option<PathBuf>,
    /// Save every used patch as PNG under `<work>/patches`.
    pub export_patches: bool,
}

#[derive(Debug, Serialize)]
pub struct DetectionReport {
    pub images: usize,
    pub patches: usize,
    pub classes: Vec<String>,
    pub folds: usize,
    pub fold_group: FoldGroup,
    pub patch: ClassificationReport,
    pub image_accuracy: f64,
    pub votes: Vec<ImageVote>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub struct Patch {
    pub patch_id: String,
    pub stimulus_id: String,
    pub features: FeatureVector,
}

/// `k` evenly spaced indices out of `n`.
pub fn spread(n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

fn patches_of(
    entry: &ManifestEntry,
    patch_size: usize,
    limit: Option<usize>,
    export: Option<&Path>,
) -> Result<Vec<Patch>, String> {
    let id = &entry.stimulus_id;
    let img = imaging::decode(&entry.path).map_err(|e| format!("{id}: {e}"))?;
    let grid = extract_patches(&img, patch_size).map_err(|e| format!("{id}: {e}"))?;
    if grid.empty {
        return Err(format!("{id}: smaller than one {patch_size}px patch"));
    }
    let chosen = spread(grid.patches.len(), limit.unwrap_or(usize::MAX));
    let mut out = Vec::with_capacity(chosen.len());
    for i in chosen {
        let patch_id = format!("{id}_r{}c{}", i / grid.cols, i % grid.cols);
        if let Some(dir) = export {
            imaging::encode_png(&grid.patches[i], dir.join(format!("{patch_id}.png")))
                .map_err(|e| format!("{patch_id}: {e}"))?;
        }
        out.push(Patch {
            features: extract_features(&grid.patches[i], &patch_id),
            patch_id,
            stimulus_id: id.clone(),
        });
    }
    Ok(out)
}

fn write_patch_features<W: std::io::Write>(
    patches: &[(Patch, String)],
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["patch_id", "stimulus_id", "method"];
    header.extend(FeatureName::ALL.iter().map(|n| n.as_str()));
    w.write_record(&header)?;
    for (p, method) in patches {
        let mut rec = vec![p.patch_id.clone(), p.stimulus_id.clone(), method.clone()];
        rec.extend(
            FeatureName::ALL
                .iter()
                .map(|&n| p.features.get(n).map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Same schema the external detection models emit, so `eval` reads both.
fn write_predictions<W: std::io::Write>(
    patches: &[(Patch, String)],
    predicted: &std::collections::BTreeMap<&str, &str>,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patch_id", "stimulus_id", "truth", "pred"])?;
    for (p, method) in patches {
        w.write_record([
            p.patch_id.as_str(),
            p.stimulus_id.as_str(),
            method.as_str(),
            predicted[p.patch_id.as_str()],
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Patch-level up-scaler detection with grouped cross-validation.
pub fn run(cfg: &RunConfig, args: &DetectArgs) -> Result<Status, CliError> {
    cfg.validate()?;
    let manifest_path = or_default(args.manifest.as_ref(), &cfg.paths.out, MANIFEST_FILE);
    let manifest = load_manifest(&manifest_path)?;
    let patch_dir = cfg.paths.work.join("patches");
    if args.export_patches {
        super::ensure_dir(&patch_dir)?;
    }
    let export = args.export_patches.then_some(patch_dir.as_path());
    let pool = thread_pool(cfg.threads())?;
    let results: Vec<Result<Vec<Patch>, String>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| patches_of(e, cfg.patch_size, cfg.detect.max_patches_per_image, export))
            .collect()
    });

    let mut warnings = Vec::new();
    let mut patches: Vec<(Patch, String)> = Vec::new();
    let mut groups = Vec::new();
    let mut failed = 0;
    for (entry, res) in manifest.entries.iter().zip(results) {
        match res {
            Ok(ps) => {
                for p in ps {
                    groups.push(match cfg.detect.fold_group {
                        FoldGroup::Source => entry.src_id.clone(),
                        FoldGroup::Image => entry.stimulus_id.clone(),
                    });
                    patches.push((p, entry.method.clone()));
                }
            }
            Err(w) => {
                log::warn!("{w}");
                warnings.push(w);
                failed += 1;
            }
        }
    }
    let mut classes = vec![SOURCE_METHOD.to_string()];
    classes.extend(manifest.methods());
    classes.retain(|c| patches.iter().any(|(_, m)| m == c));
    if classes.len() < 2 {
        return Err(CliError::usage_msg("detection needs patches of at least two methods"));
    }
    let labels: Vec<usize> = patches
        .iter()
        .map(|(_, m)| classes.iter().position(|c| c == m).expect("class list covers every method"))
        .collect();
    let patch_ids: Vec<String> = patches.iter().map(|(p, _)| p.patch_id.clone()).collect();
    let image_ids: Vec<String> = patches.iter().map(|(p, _)| p.stimulus_id.clone()).collect();
    let x: Vec<Vec<f64>> = patches.iter().map(|(p, _)| p.features.to_row()).collect();
    let names: Vec<String> = FeatureName::ALL.iter().map(|n| n.as_str().to_string()).collect();
    log::info!("{} patches from {} images", patches.len(), manifest.entries.len() - failed);

    let result = pool
        .install(|| {
            detect_baseline(
                &patch_ids,
                &image_ids,
                &groups,
                &x,
                &labels,
                &classes,
                &names,
                &cfg.forest_config(),
                cfg.folds,
            )
        })
        .map_err(|e| match e {
            uab_core::forest::ForestError::TooFewSamples { .. } => CliError::Usage(e.into()),
            e => CliError::Runtime(e.into()),
        })?;
    let patch_report = result
        .patch
        .classification
        .clone()
        .ok_or_else(|| CliError::runtime_msg("classification run produced no report"))?;
    let predicted: std::collections::BTreeMap<&str, &str> = result
        .patch
        .samples
        .iter()
        .map(|s| (s.stimulus_id.as_str(), classes[s.prediction as usize].as_str()))
        .collect();

    let out = &cfg.paths.out;
    write_csv(&out.join(PATCH_FEATURES_FILE), |w| write_patch_features(&patches, w))?;
    write_csv(&out.join(PREDICTIONS_FILE), |w| write_predictions(&patches, &predicted, w))?;
    write_csv(&out.join("confusion.csv"), |w| write_confusion_csv(&patch_report, w))?;
    write_text(
        &out.join("confusion.svg"),
        &svg::confusion(
            &format!("Patch detection (accuracy {:.3})", patch_report.accuracy),
            &classes,
            &patch_report.confusion,
        ),
    )?;
    let report = DetectionReport {
        images: result.images.len(),
        patches: patches.len(),
        classes,
        folds: cfg.folds,
        fold_group: cfg.detect.fold_group,
        image_accuracy: result.image_accuracy,
        patch: patch_report,
        votes: result.images,
        warnings,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    log::info!(
        "patch accuracy {:.4}, image accuracy {:.4}",
        report.patch.accuracy,
        report.image_accuracy
    );
    Ok(Status::from_failures(failed))
}
