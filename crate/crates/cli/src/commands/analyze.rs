use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use uab_core::subjective::{analyze, load_ratings, mos_map, write_mos_csv, AnalysisReport};
use uab_core::upscalers::DatasetManifest;

use super::features::load_manifest;
use super::{or_default, require_file, write_csv, write_json, write_text, MANIFEST_FILE, MOS_FILE};
use crate::config::RunConfig;
use crate::error::{Classify, CliError, Context, Status};
use crate::svg;

pub const REPORT_FILE: &str = "analysis.json";

#[derive(Debug)]
pub struct AnalyzeArgs {
    pub ratings: PathBuf,
    pub manifest: Option<PathBuf>,
}

fn factor_label(f: u32) -> String {
    if f == 1 {
        "source".into()
    } else {
        format!("x{f}")
    }
}

/// MOS grouped by factor, and by method within each factor.
fn mos_groups(
    mos: &BTreeMap<String, f64>,
    manifest: &DatasetManifest,
) -> (Vec<(String, Vec<f64>)>, Vec<(String, Vec<f64>)>) {
    let mut by_factor: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut by_method: BTreeMap<(u32, String), Vec<f64>> = BTreeMap::new();
    for e in &manifest.entries {
        let Some(&m) = mos.get(&e.stimulus_id) else { continue };
        by_factor.entry(e.factor).or_default().push(m);
        by_method.entry((e.factor, e.method.clone())).or_default().push(m);
    }
    let factors = by_factor
        .into_iter()
        .map(|(f, v)| (factor_label(f), v))
        .collect();
    // manifest method order inside each factor
    let order = manifest.methods();
    let mut methods: Vec<(String, Vec<f64>)> = Vec::new();
    let keys: BTreeSet<u32> = by_method.keys().map(|k| k.0).collect();
    for f in keys {
        if f == 1 {
            if let Some(v) = by_method.remove(&(1, uab_core::upscalers::SOURCE_METHOD.to_string())) {
                methods.push(("source".into(), v));
            }
            continue;
        }
        for m in &order {
            if let Some(v) = by_method.remove(&(f, m.clone())) {
                methods.push((format!("{m} x{f}"), v));
            }
        }
    }
    (factors, methods)
}

fn preference_chart(report: &AnalysisReport) -> Option<String> {
    let counts = report.preference_counts.as_ref()?;
    let factors: BTreeSet<u32> = counts.values().flat_map(|m| m.keys().copied()).collect();
    let methods: Vec<String> = counts.keys().cloned().collect();
    let series = factors
        .iter()
        .map(|&f| {
            let values = methods
                .iter()
                .map(|m| counts[m].get(&f).copied().unwrap_or(0) as f64)
                .collect();
            (factor_label(f), values)
        })
        .collect::<Vec<_>>();
    Some(svg::bars(
        "Images on which each method had the highest MOS",
        "images",
        &methods,
        &series,
    ))
}

fn source_chart(report: &AnalysisReport) -> Option<String> {
    let sp = report.source_preference.as_ref()?;
    let categories: Vec<String> = sp.best_of.iter().map(|c| factor_label(c.factor)).collect();
    let series = vec![
        ("source preferred".to_string(), sp.best_of.iter().map(|c| c.yes as f64).collect()),
        ("not preferred".to_string(), sp.best_of.iter().map(|c| c.no as f64).collect()),
    ];
    Some(svg::bars(
        "Source against its best up-scaled version",
        "images",
        &categories,
        &series,
    ))
}

/// MOS, SOS fit, preference tables and distribution plots.
pub fn run(cfg: &RunConfig, args: &AnalyzeArgs) -> Result<Status, CliError> {
    require_file(&args.ratings, "ratings file")?;
    let manifest_path = or_default(args.manifest.as_ref(), &cfg.paths.out, MANIFEST_FILE);
    let manifest = load_manifest(&manifest_path)?;
    let records = load_ratings(&args.ratings)
        .with_context(|| format!("reading ratings {}", args.ratings.display()))
        .usage()?;
    let known = manifest.index();
    let unknown: BTreeSet<&str> = records
        .iter()
        .map(|r| r.stimulus_id.as_str())
        .filter(|id| !known.contains_key(id))
        .collect();
    let (entries, mut report) = analyze(&records, &manifest);
    if !unknown.is_empty() {
        let msg = format!("{} rated stimuli are not in the manifest", unknown.len());
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }

    let out = &cfg.paths.out;
    write_csv(&out.join(MOS_FILE), |w| write_mos_csv(&entries, w))?;
    write_json(&out.join(REPORT_FILE), &report)?;
    let mos = mos_map(&entries);
    let (by_factor, by_method) = mos_groups(&mos, &manifest);
    let range = Some((0.8, 5.2));
    write_text(
        &out.join("mos_by_factor.svg"),
        &svg::boxplot("MOS by up-scaling factor", "MOS", &by_factor, range),
    )?;
    write_text(
        &out.join("mos_by_method.svg"),
        &svg::boxplot("MOS by method and factor", "MOS", &by_method, range),
    )?;
    if let Some(chart) = preference_chart(&report) {
        write_text(&out.join("preferences.svg"), &chart)?;
    }
    if let Some(chart) = source_chart(&report) {
        write_text(&out.join("source_preference.svg"), &chart)?;
    }
    if let Some(sos) = &report.sos {
        log::info!("SOS parameter a = {:.4} over {} stimuli", sos.a, sos.n_points);
    }
    log::info!("{} stimuli rated by {} participants", entries.len(), report.participants);
    Ok(Status::Complete)
}
