use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;
use uab_core::evalmetrics::{
    classification_report, correlate_scores, correlation_triple, read_scores, ClassificationReport,
    ComparisonReport, CorrelationTriple,
};
use uab_core::forest::argmax_lowest;
use uab_core::upscalers::SOURCE_METHOD;

use super::{load_mos, require_file, write_json, write_text};
use crate::config::RunConfig;
use crate::error::{Classify, CliError, Context, Status};
use crate::svg;

#[derive(Debug, Default)]
pub struct EvalArgs {
    pub predictions: PathBuf,
    pub mos: Option<PathBuf>,
}

/// Recognized prediction layouts, by header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// `stimulus_id,model,score`: one or more score models against MOS.
    Scores,
    /// `stimulus_id,truth_mos,pred_mos` from an appeal regressor.
    Appeal,
    /// `stimulus_id,truth,prediction` with numbers.
    Regression,
    /// `stimulus_id,truth,prediction` with class names.
    Classification,
    /// `patch_id,stimulus_id,truth,pred` from a patch classifier.
    PatchClassification,
    /// `stimulus_id` plus a prediction column; truth comes from `--mos`.
    Generic { column: String },
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub format: Format,
    pub rows: usize,
    /// Rows without a matching MOS.
    pub skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationTriple>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<ComparisonReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationReport>,
    /// Majority vote of the patches of each image.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_classification: Option<ClassificationReport>,
}

fn sniff(headers: &[String], rows: &[csv::StringRecord]) -> Option<Format> {
    let has = |n: &str| headers.iter().any(|h| h == n);
    if has("stimulus_id") && has("model") && has("score") {
        return Some(Format::Scores);
    }
    if has("patch_id") && has("stimulus_id") && has("truth") && has("pred") {
        return Some(Format::PatchClassification);
    }
    if has("stimulus_id") && has("truth_mos") && has("pred_mos") {
        return Some(Format::Appeal);
    }
    if has("stimulus_id") && has("truth") && has("prediction") {
        let t = headers.iter().position(|h| h == "truth")?;
        let p = headers.iter().position(|h| h == "prediction")?;
        let numeric = rows
            .iter()
            .all(|r| r[t].trim().parse::<f64>().is_ok() && r[p].trim().parse::<f64>().is_ok());
        return Some(if numeric { Format::Regression } else { Format::Classification });
    }
    if has("stimulus_id") {
        for c in ["prediction", "pred", "pred_mos", "score", "mos"] {
            if has(c) {
                return Some(Format::Generic { column: c.into() });
            }
        }
    }
    None
}

struct Table {
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
    path: PathBuf,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let mut reader = csv::Reader::from_path(path)
            .with_context(|| format!("opening {}", path.display()))
            .usage()?;
        let headers = reader
            .headers()
            .with_context(|| format!("reading header of {}", path.display()))
            .usage()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, r) in reader.records().enumerate() {
            rows.push(r.with_context(|| format!("{}: row {}", path.display(), i + 2)).usage()?);
        }
        Ok(Table {
            headers,
            rows,
            path: path.to_path_buf(),
        })
    }

    fn col(&self, name: &str) -> usize {
        self.headers.iter().position(|h| h == name).expect("sniffed column exists")
    }

    fn text(&self, name: &str) -> Vec<String> {
        let c = self.col(name);
        self.rows.iter().map(|r| r[c].trim().to_string()).collect()
    }

    fn numbers(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let c = self.col(name);
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].trim()
                    .parse::<f64>()
                    .with_context(|| format!("{}: row {}: bad {name} `{}`", self.path.display(), i + 2, &r[c]))
                    .usage()
            })
            .collect()
    }
}

/// Class names in a stable order, the source class first.
fn class_list<'a>(labels: impl Iterator<Item = &'a String>) -> Vec<String> {
    let set: BTreeSet<&String> = labels.collect();
    let mut classes: Vec<String> = set.into_iter().cloned().collect();
    if let Some(i) = classes.iter().position(|c| c == SOURCE_METHOD) {
        let s = classes.remove(i);
        classes.insert(0, s);
    }
    classes
}

fn classify(truth: &[String], pred: &[String]) -> Result<ClassificationReport, CliError> {
    let classes = class_list(truth.iter().chain(pred));
    let index = |s: &String| classes.iter().position(|c| c == s).expect("listed");
    let t: Vec<usize> = truth.iter().map(index).collect();
    let p: Vec<usize> = pred.iter().map(index).collect();
    classification_report(&t, &p, &classes).runtime()
}

/// Majority truth and prediction per image, ties to the first class.
fn image_votes(images: &[String], truth: &[String], pred: &[String]) -> (Vec<String>, Vec<String>) {
    let classes = class_list(truth.iter().chain(pred));
    let index = |s: &String| classes.iter().position(|c| c == s).expect("listed");
    let mut tallies: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for ((img, t), p) in images.iter().zip(truth).zip(pred) {
        let e = tallies
            .entry(img)
            .or_insert_with(|| (vec![0; classes.len()], vec![0; classes.len()]));
        e.0[index(t)] += 1;
        e.1[index(p)] += 1;
    }
    tallies
        .values()
        .map(|(t, p)| (classes[argmax_lowest(t)].clone(), classes[argmax_lowest(p)].clone()))
        .unzip()
}

/// Pair predictions with truth from the MOS file, skipping unknown ids.
fn join_mos(
    ids: &[String],
    pred: &[f64],
    mos: &BTreeMap<String, f64>,
) -> (Vec<(f64, f64)>, usize) {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (id, &p) in ids.iter().zip(pred) {
        match mos.get(id) {
            Some(&m) => pairs.push((m, p)),
            None => {
                log::warn!("no MOS for `{id}`; skipped");
                skipped += 1;
            }
        }
    }
    (pairs, skipped)
}

fn regression(pairs: &[(f64, f64)]) -> Result<CorrelationTriple, CliError> {
    let (t, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let triple = correlation_triple(&t, &p)
        .context("need at least two matched rows")
        .usage()?;
    if !triple.is_defined() {
        log::warn!("correlation undefined for constant truth or predictions; reported as null");
    }
    Ok(triple)
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn scatter_title(name: &str, c: &CorrelationTriple) -> String {
    match c.pearson {
        Some(r) => format!("{name}: Pearson {r:.3}"),
        None => format!("{name}: Pearson undefined"),
    }
}

/// Correlation or classification metrics for a prediction file. Outputs
/// are named after the file stem: `<stem>_eval.json` plus plots.
pub fn run(cfg: &RunConfig, args: &EvalArgs) -> Result<Status, CliError> {
    require_file(&args.predictions, "prediction file")?;
    let table = Table::read(&args.predictions)?;
    let format = sniff(&table.headers, &table.rows).ok_or_else(|| {
        CliError::usage_msg(format!(
            "{}: unrecognized columns {}",
            args.predictions.display(),
            table.headers.join(",")
        ))
    })?;
    let mos = args.mos.as_deref().map(load_mos).transpose()?;
    let stem = file_safe(
        &args
            .predictions
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "predictions".into()),
    );
    let out = &cfg.paths.out;
    let mut report = EvalReport {
        format: format.clone(),
        rows: table.rows.len(),
        skipped: 0,
        correlation: None,
        models: None,
        classification: None,
        image_classification: None,
    };
    let need_mos = || {
        mos.as_ref()
            .ok_or_else(|| CliError::usage_msg(format!("{format:?} predictions need --mos")))
    };
    match &format {
        Format::Scores => {
            let mos = need_mos()?;
            let scores = read_scores(&args.predictions).usage()?;
            report.skipped = scores.iter().filter(|s| !mos.contains_key(&s.stimulus_id)).count();
            let models = correlate_scores(&scores, mos).usage()?;
            let mut by_model: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
            for s in &scores {
                if let Some(&m) = mos.get(&s.stimulus_id) {
                    by_model.entry(&s.model).or_default().push((m, s.score));
                }
            }
            for e in &models.entries {
                write_text(
                    &out.join(format!("{stem}_{}_scatter.svg", file_safe(&e.name))),
                    &svg::scatter(&scatter_title(&e.name, &e.correlation), "MOS", &e.name, &by_model[e.name.as_str()], false),
                )?;
            }
            report.models = Some(models);
        }
        Format::Appeal | Format::Regression | Format::Generic { .. } => {
            let (truth_col, pred_col) = match &format {
                Format::Appeal => ("truth_mos", "pred_mos"),
                Format::Regression => ("truth", "prediction"),
                Format::Generic { column } => ("", column.as_str()),
                _ => unreachable!(),
            };
            let ids = table.text("stimulus_id");
            let pred = table.numbers(pred_col)?;
            let pairs = match &mos {
                Some(m) => {
                    let (pairs, skipped) = join_mos(&ids, &pred, m);
                    report.skipped = skipped;
                    pairs
                }
                None if truth_col.is_empty() => need_mos().map(|_| Vec::new())?,
                None => table.numbers(truth_col)?.into_iter().zip(pred).collect(),
            };
            let triple = regression(&pairs)?;
            write_text(
                &out.join(format!("{stem}_scatter.svg")),
                &svg::scatter(&scatter_title(&stem, &triple), "MOS", "prediction", &pairs, true),
            )?;
            report.correlation = Some(triple);
        }
        Format::Classification | Format::PatchClassification => {
            let (truth, pred) = if format == Format::Classification {
                (table.text("truth"), table.text("prediction"))
            } else {
                (table.text("truth"), table.text("pred"))
            };
            if truth.is_empty() {
                return Err(CliError::usage_msg("no prediction rows"));
            }
            let rep = classify(&truth, &pred)?;
            write_text(
                &out.join(format!("{stem}_confusion.svg")),
                &svg::confusion(&format!("{stem} (accuracy {:.3})", rep.accuracy), &rep.class_names, &rep.confusion),
            )?;
            if format == Format::PatchClassification {
                let (t, p) = image_votes(&table.text("stimulus_id"), &truth, &pred);
                report.image_classification = Some(classify(&t, &p)?);
            }
            report.classification = Some(rep);
        }
    }
    write_json(&out.join(format!("{stem}_eval.json")), &report)?;
    if let Some(c) = &report.correlation {
        log::info!("pearson {:?} kendall {:?} spearman {:?} (n = {})", c.pearson, c.kendall, c.spearman, c.n);
    }
    if let Some(c) = &report.classification {
        log::info!("accuracy {:.4}, f1 {:.4}, mcc {:.4}", c.accuracy, c.f1, c.mcc);
    }
    Ok(Status::from_failures(report.skipped))
}
