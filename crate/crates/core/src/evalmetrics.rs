//! Correlation and classification metrics, plus ingestion of third-party
//! model scores for side-by-side comparison.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {min} samples, got {got}")]
    TooShort { min: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("non-finite input")]
    NonFinite,
    #[error("class index {index} out of range for {classes} classes")]
    UnknownClass { index: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooShort {
            min: 2,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation (two-pass).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Sum of t(t-1)/2 over runs of equal adjacent values.
fn tied_pairs<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort by value, returning the number of inversions.
fn sort_count_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_count_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b (tie corrected), Knight's O(n log n) algorithm.
pub fn kendall(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n0 = n * (n - 1) / 2;
    let ties_x = tied_pairs(&pairs, |a, b| a.0 == b.0);
    let ties_xy = tied_pairs(&pairs, |a, b| a.0 == b.0 && a.1 == b.1);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = sort_count_swaps(&mut ys, &mut buf);
    let ties_y = tied_pairs(&ys, |a, b| a == b);
    let denom = ((n0 - ties_x) as f64) * ((n0 - ties_y) as f64);
    if denom == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let numer = n0 as f64 - ties_x as f64 - ties_y as f64 + ties_xy as f64 - 2.0 * swaps as f64;
    Ok((numer / denom.sqrt()).clamp(-1.0, 1.0))
}

/// Pearson, Kendall and Spearman against the same truth. A `None` marks a
/// coefficient that is undefined (zero variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTriple {
    pub n: usize,
    pub pearson: Option<f64>,
    pub kendall: Option<f64>,
    pub spearman: Option<f64>,
}

impl CorrelationTriple {
    pub fn is_defined(&self) -> bool {
        self.pearson.is_some() && self.kendall.is_some() && self.spearman.is_some()
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::ZeroVariance) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Correlate `prediction` against `truth`.
pub fn correlation_triple(truth: &[f64], prediction: &[f64]) -> Result<CorrelationTriple> {
    check_pair(truth, prediction)?;
    Ok(CorrelationTriple {
        n: truth.len(),
        pearson: defined(pearson(truth, prediction))?,
        kendall: defined(kendall(truth, prediction))?,
        spearman: defined(spearman(truth, prediction))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Support-weighted precision/recall/F1, multiclass MCC and the confusion
/// matrix (rows = truth, columns = prediction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
    pub class_names: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch(truth.len(), pred.len()));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        let bad = if t >= classes { Some(t) } else if p >= classes { Some(p) } else { None };
        if let Some(index) = bad {
            return Err(MetricError::UnknownClass { index, classes });
        }
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn classification_report(
    truth: &[usize],
    pred: &[usize],
    class_names: &[String],
) -> Result<ClassificationReport> {
    if truth.is_empty() {
        return Err(MetricError::TooShort { min: 1, got: 0 });
    }
    let k = class_names.len();
    let confusion = confusion_matrix(truth, pred, k)?;
    let total = truth.len() as f64;
    let true_counts: Vec<f64> = confusion.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let pred_counts: Vec<f64> = (0..k)
        .map(|j| confusion.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let correct: f64 = (0..k).map(|i| confusion[i][i] as f64).sum();

    let mut per_class = Vec::with_capacity(k);
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for i in 0..k {
        let tp = confusion[i][i] as f64;
        let precision = ratio(tp, pred_counts[i]);
        let recall = ratio(tp, true_counts[i]);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        let w = true_counts[i] / total;
        wp += w * precision;
        wr += w * recall;
        wf += w * f1;
        per_class.push(ClassMetrics {
            class: class_names[i].clone(),
            precision,
            recall,
            f1,
            support: true_counts[i] as u64,
        });
    }

    let cov_tp = correct * total - pred_counts.iter().zip(&true_counts).map(|(p, t)| p * t).sum::<f64>();
    let cov_pp = total * total - pred_counts.iter().map(|p| p * p).sum::<f64>();
    let cov_tt = total * total - true_counts.iter().map(|t| t * t).sum::<f64>();
    let mcc = ratio(cov_tp, (cov_pp * cov_tt).sqrt());

    Ok(ClassificationReport {
        accuracy: correct / total,
        f1: wf,
        precision: wp,
        recall: wr,
        mcc,
        class_names: class_names.to_vec(),
        confusion,
        per_class,
    })
}

/// Confusion matrix as CSV: header `truth,<pred classes...>`.
pub fn write_confusion_csv<W: Write>(report: &ClassificationReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["truth".to_string()];
    header.extend(report.class_names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in report.class_names.iter().zip(&report.confusion) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCorrelation {
    pub name: String,
    #[serde(flatten)]
    pub correlation: CorrelationTriple,
}

/// Per-model or per-feature correlations, sorted by Pearson (descending,
/// undefined last).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub entries: Vec<NamedCorrelation>,
}

impl ComparisonReport {
    pub fn new(mut entries: Vec<NamedCorrelation>) -> Self {
        entries.sort_by(|a, b| match (a.correlation.pearson, b.correlation.pearson) {
            (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.name.cmp(&b.name)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => a.name.cmp(&b.name),
        });
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<&CorrelationTriple> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.correlation)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: u64,
        message: String,
    },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    stimulus_id: String,
    model: String,
    score: f64,
}

/// One external score, e.g. from a no-reference quality model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub stimulus_id: String,
    pub model: String,
    pub score: f64,
}

/// Read a `stimulus_id,model,score` CSV.
pub fn read_scores(path: impl AsRef<Path>) -> std::result::Result<Vec<ScoreRecord>, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<ScoreRow>().enumerate() {
        let row = row.map_err(|e| IngestError::Parse {
            path: path.to_path_buf(),
            row: e.position().map(|p| p.line()).unwrap_or(i as u64 + 2),
            message: e.to_string(),
        })?;
        out.push(ScoreRecord {
            stimulus_id: row.stimulus_id,
            model: row.model,
            score: row.score,
        });
    }
    Ok(out)
}

pub fn write_scores<W: Write>(scores: &[ScoreRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stimulus_id", "model", "score"])?;
    for s in scores {
        w.write_record([s.stimulus_id.as_str(), s.model.as_str(), &s.score.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Correlate every model's scores against MOS; unknown stimuli are skipped
/// with a warning.
pub fn correlate_scores(
    scores: &[ScoreRecord],
    mos: &BTreeMap<String, f64>,
) -> Result<ComparisonReport> {
    let mut per_model: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut unknown = 0usize;
    for s in scores {
        match mos.get(&s.stimulus_id) {
            Some(&m) => {
                let e = per_model.entry(&s.model).or_default();
                e.0.push(m);
                e.1.push(s.score);
            }
            None => {
                unknown += 1;
                log::warn!("score for unknown stimulus `{}` skipped", s.stimulus_id);
            }
        }
    }
    if unknown > 0 {
        log::warn!("{unknown} score rows referenced unknown stimuli");
    }
    let mut entries = Vec::with_capacity(per_model.len());
    for (model, (truth, pred)) in per_model {
        entries.push(NamedCorrelation {
            name: model.to_string(),
            correlation: correlation_triple(&truth, &pred)?,
        });
    }
    Ok(ComparisonReport::new(entries))
}

pub fn ingest_external_scores(
    path: impl AsRef<Path>,
    mos: &BTreeMap<String, f64>,
) -> std::result::Result<ComparisonReport, IngestError> {
    let scores = read_scores(path)?;
    Ok(correlate_scores(&scores, mos)?)
}
