use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use uab_core::evalmetrics::{write_scores, ScoreRecord};
use uab_core::features::{extract_features, write_feature_csv, FeatureVector};
use uab_core::frmetrics::fr_scores;
use uab_core::imaging::{self, center_crop, ImageBuffer};
use uab_core::upscalers::{DatasetManifest, ManifestEntry};

use super::{or_default, require_file, thread_pool, write_csv, write_json, FEATURES_FILE, FR_SCORES_FILE, MANIFEST_FILE};
use crate::config::RunConfig;
use crate::error::{CliError, Status};

pub const REPORT_FILE: &str = "features_report.json";

#[derive(Debug, Default)]
pub struct FeatureArgs {
    pub manifest: Option<PathBuf>,
    /// Also write a centered `crop_size` square of every stimulus.
    pub export_crops: bool,
}

#[derive(Debug, Serialize)]
pub struct FeaturesReport {
    pub stimuli: usize,
    /// Rows with every feature present.
    pub complete_rows: usize,
    pub unreadable: usize,
    pub fr_scores: usize,
    pub warnings: Vec<String>,
}

struct Item {
    features: FeatureVector,
    fr: Vec<ScoreRecord>,
    warnings: Vec<String>,
    unreadable: bool,
}

pub(crate) fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    require_file(path, "manifest")?;
    DatasetManifest::load(path).map_err(|e| CliError::Usage(e.into()))
}

fn process(
    entry: &ManifestEntry,
    reference: Option<&ImageBuffer>,
    crops: Option<(&Path, usize)>,
) -> Item {
    let id = entry.stimulus_id.as_str();
    let img = match imaging::decode(&entry.path) {
        Ok(img) => img,
        Err(e) => {
            return Item {
                features: FeatureVector::empty(id),
                fr: Vec::new(),
                warnings: vec![format!("{id}: {e}")],
                unreadable: true,
            }
        }
    };
    let features = extract_features(&img, id);
    let mut warnings: Vec<String> = features
        .diagnostics
        .iter()
        .map(|d| format!("{id}: {d}"))
        .collect();
    let mut fr = Vec::new();
    if !entry.is_source() {
        match reference {
            Some(r) => {
                let (scores, errors) = fr_scores(id, r, &img);
                fr.extend(scores.iter().map(ScoreRecord::from));
                warnings.extend(errors.iter().map(|(m, e)| format!("{id}: {}: {e}", m.as_str())));
            }
            None => warnings.push(format!("{id}: no readable reference, full-reference scores skipped")),
        }
    }
    if let Some((dir, size)) = crops {
        let res = center_crop(&img, size, size)
            .and_then(|c| imaging::encode_png(&c, dir.join(format!("{id}.png"))));
        if let Err(e) = res {
            warnings.push(format!("{id}: crop: {e}"));
        }
    }
    Item {
        features,
        fr,
        warnings,
        unreadable: false,
    }
}

/// Signal features of every stimulus plus full-reference scores of every
/// up-scaled stimulus against its source.
pub fn run(cfg: &RunConfig, args: &FeatureArgs) -> Result<Status, CliError> {
    cfg.validate()?;
    let manifest_path = or_default(args.manifest.as_ref(), &cfg.paths.out, MANIFEST_FILE);
    let manifest = load_manifest(&manifest_path)?;
    let crop_dir = cfg.paths.work.join("crops");
    if args.export_crops {
        super::ensure_dir(&crop_dir)?;
    }
    let crops = args.export_crops.then_some((crop_dir.as_path(), cfg.crop_size));

    let mut by_src: BTreeMap<&str, Vec<(usize, &ManifestEntry)>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_src.entry(e.src_id.as_str()).or_default().push((i, e));
    }
    let refs = manifest.references();
    let groups: Vec<_> = by_src.into_iter().collect();
    let pool = thread_pool(cfg.threads())?;
    let done: Vec<Vec<(usize, Item)>> = pool.install(|| {
        groups
            .par_iter()
            .map(|(src, members)| {
                let reference = refs.get(src).and_then(|r| imaging::decode(&r.path).ok());
                members
                    .iter()
                    .map(|&(i, e)| (i, process(e, reference.as_ref(), crops)))
                    .collect()
            })
            .collect()
    });
    let mut items: Vec<(usize, Item)> = done.into_iter().flatten().collect();
    items.sort_by_key(|(i, _)| *i);

    let mut report = FeaturesReport {
        stimuli: items.len(),
        complete_rows: 0,
        unreadable: 0,
        fr_scores: 0,
        warnings: Vec::new(),
    };
    let mut rows = Vec::with_capacity(items.len());
    let mut fr = Vec::new();
    for (_, item) in items {
        if item.unreadable {
            report.unreadable += 1;
        }
        if item.features.to_row().iter().all(|v| v.is_finite()) {
            report.complete_rows += 1;
        }
        for w in &item.warnings {
            log::warn!("{w}");
        }
        report.warnings.extend(item.warnings);
        rows.push(item.features);
        fr.extend(item.fr);
    }
    report.fr_scores = fr.len();
    let out = &cfg.paths.out;
    write_csv(&out.join(FEATURES_FILE), |w| write_feature_csv(&rows, w))?;
    write_csv(&out.join(FR_SCORES_FILE), |w| write_scores(&fr, w))?;
    write_json(&out.join(REPORT_FILE), &report)?;
    log::info!(
        "{} feature rows ({} complete), {} full-reference scores",
        report.stimuli,
        report.complete_rows,
        report.fr_scores
    );
    Ok(Status::from_failures(report.unreadable))
}
