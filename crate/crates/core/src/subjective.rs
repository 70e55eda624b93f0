//! Rating ingestion, MOS aggregation, SOS fitting and preference analyses.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::filters::median;
use crate::upscalers::DatasetManifest;

pub const MIN_SCORE: i64 = 1;
pub const MAX_SCORE: i64 = 5;

#[derive(Debug, Error)]
pub enum SubjectiveError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}: row {row}: {message}")]
    Parse {
        source_name: String,
        row: u64,
        message: String,
    },
    #[error("{source_name}: row {row}: score {value} outside [1,5]")]
    Range {
        source_name: String,
        row: u64,
        value: i64,
    },
    #[error("need at least {needed} usable entries, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("no MOS for stimulus `{0}`")]
    MissingStimulus(String),
}

pub type Result<T> = std::result::Result<T, SubjectiveError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub participant_id: String,
    pub stimulus_id: String,
    pub score: u8,
}

pub const RATINGS_HEADER: [&str; 3] = ["participant_id", "stimulus_id", "rating"];

/// Parse a ratings CSV. A repeated (participant, stimulus) pair keeps the
/// later score in the position of the first one and logs a warning.
pub fn read_ratings<R: Read>(input: R, source_name: &str) -> Result<Vec<RatingRecord>> {
    let parse_err = |row: u64, message: String| SubjectiveError::Parse {
        source_name: source_name.to_string(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != RATINGS_HEADER {
        return Err(parse_err(1, format!("expected header {}", RATINGS_HEADER.join(","))));
    }
    let mut records: Vec<RatingRecord> = Vec::new();
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        let (participant, stimulus, raw) = (&rec[0], &rec[1], &rec[2]);
        if participant.is_empty() || stimulus.is_empty() {
            return Err(parse_err(row, "empty participant or stimulus id".into()));
        }
        let value: i64 = raw
            .parse()
            .map_err(|_| parse_err(row, format!("rating `{raw}` is not an integer")))?;
        if !(MIN_SCORE..=MAX_SCORE).contains(&value) {
            return Err(SubjectiveError::Range {
                source_name: source_name.to_string(),
                row,
                value,
            });
        }
        let record = RatingRecord {
            participant_id: participant.to_string(),
            stimulus_id: stimulus.to_string(),
            score: value as u8,
        };
        let key = (record.participant_id.clone(), record.stimulus_id.clone());
        match seen.get(&key) {
            Some(&idx) => {
                warn!(
                    "{source_name}: row {row}: duplicate rating of {} by {}, keeping the later one",
                    key.1, key.0
                );
                records[idx] = record;
            }
            None => {
                seen.insert(key, records.len());
                records.push(record);
            }
        }
    }
    Ok(records)
}

pub fn load_ratings(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| SubjectiveError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_ratings(file, &path.display().to_string())
}

pub fn participant_count(records: &[RatingRecord]) -> usize {
    records
        .iter()
        .map(|r| r.participant_id.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosEntry {
    pub stimulus_id: String,
    pub n: usize,
    pub mos: f64,
    /// Sample SD; 0 when `n == 1`.
    pub sd: f64,
    /// Half-width of the t-based 95% interval; `None` when `n == 1`.
    pub ci95: Option<f64>,
}

/// Two-sided 95% Student-t quantile with `dof` degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

fn mos_of(stimulus_id: &str, mut scores: Vec<u8>) -> MosEntry {
    // sorting makes the floating-point result independent of record order
    scores.sort_unstable();
    let n = scores.len();
    let mos = scores.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
    let (sd, ci95) = if n < 2 {
        (0.0, None)
    } else {
        let ss: f64 = scores.iter().map(|&s| (s as f64 - mos).powi(2)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        (sd, Some(t_quantile_975(n - 1) * sd / (n as f64).sqrt()))
    };
    MosEntry {
        stimulus_id: stimulus_id.to_string(),
        n,
        mos,
        sd,
        ci95,
    }
}

/// Per-stimulus aggregates, ordered by stimulus id.
pub fn compute_mos(records: &[RatingRecord]) -> Vec<MosEntry> {
    let mut by_stimulus: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for r in records {
        by_stimulus.entry(&r.stimulus_id).or_default().push(r.score);
    }
    by_stimulus
        .into_iter()
        .map(|(id, scores)| mos_of(id, scores))
        .collect()
}

pub fn mos_map(entries: &[MosEntry]) -> BTreeMap<String, f64> {
    entries.iter().map(|e| (e.stimulus_id.clone(), e.mos)).collect()
}

pub fn write_mos_csv<W: Write>(entries: &[MosEntry], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stimulus_id", "n", "mos", "sd", "ci95"])?;
    for e in entries {
        w.write_record([
            e.stimulus_id.clone(),
            e.n.to_string(),
            e.mos.to_string(),
            e.sd.to_string(),
            e.ci95.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mos_csv(path: impl AsRef<Path>) -> Result<Vec<MosEntry>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| SubjectiveError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |row: u64, message: String| SubjectiveError::Parse {
        source_name: name.clone(),
        row,
        message,
    };
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["stimulus_id", "n", "mos", "sd", "ci95"] {
        return Err(parse_err(1, "expected header stimulus_id,n,mos,sd,ci95".into()));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .map_err(|e| parse_err(row, format!("column {j}: {e}")))
        };
        out.push(MosEntry {
            stimulus_id: rec[0].to_string(),
            n: rec[1]
                .parse()
                .map_err(|e| parse_err(row, format!("n: {e}")))?,
            mos: num(2)?,
            sd: num(3)?,
            ci95: if rec[4].is_empty() { None } else { Some(num(4)?) },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteSummary {
    pub stimuli: usize,
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

pub fn vote_summary(entries: &[MosEntry]) -> Option<VoteSummary> {
    if entries.is_empty() {
        return None;
    }
    let counts = entries.iter().map(|e| e.n);
    Some(VoteSummary {
        stimuli: entries.len(),
        min: counts.clone().min().unwrap(),
        max: counts.clone().max().unwrap(),
        mean: counts.sum::<usize>() as f64 / entries.len() as f64,
    })
}

/// Parabola of the 5-point SOS hypothesis, `SOS² = a·g(MOS)`.
pub fn sos_parabola(mos: f64) -> f64 {
    -mos * mos + 6.0 * mos - 5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SosFit {
    pub a: f64,
    pub residual_rms: f64,
    pub n_points: usize,
}

/// Least-squares `a` of `sd² = a·g(mos)` over entries rated at least twice.
pub fn fit_sos(entries: &[MosEntry]) -> Result<SosFit> {
    let points: Vec<(f64, f64)> = entries
        .iter()
        .filter(|e| e.n >= 2)
        .map(|e| (sos_parabola(e.mos), e.sd * e.sd))
        .collect();
    if points.len() < 2 {
        return Err(SubjectiveError::InsufficientData {
            needed: 2,
            got: points.len(),
        });
    }
    let num: f64 = points.iter().map(|(g, s2)| g * s2).sum();
    let den: f64 = points.iter().map(|(g, _)| g * g).sum();
    let a = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };
    let rss: f64 = points.iter().map(|(g, s2)| (s2 - a * g).powi(2)).sum();
    Ok(SosFit {
        a,
        residual_rms: (rss / points.len() as f64).sqrt(),
        n_points: points.len(),
    })
}

/// Up-scaled MOS grouped by (source, factor) then method, from the manifest.
fn upscaled_mos<'a>(
    mos: &BTreeMap<String, f64>,
    manifest: &'a DatasetManifest,
) -> Result<BTreeMap<(&'a str, u32), Vec<(&'a str, f64)>>> {
    let mut groups: BTreeMap<(&str, u32), Vec<(&str, f64)>> = BTreeMap::new();
    for e in manifest.entries.iter().filter(|e| !e.is_source()) {
        let m = *mos
            .get(&e.stimulus_id)
            .ok_or_else(|| SubjectiveError::MissingStimulus(e.stimulus_id.clone()))?;
        groups
            .entry((e.src_id.as_str(), e.factor))
            .or_default()
            .push((e.method.as_str(), m));
    }
    Ok(groups)
}

fn source_mos<'a>(
    mos: &BTreeMap<String, f64>,
    manifest: &'a DatasetManifest,
) -> Result<BTreeMap<&'a str, f64>> {
    manifest
        .references()
        .into_iter()
        .map(|(src, e)| {
            mos.get(&e.stimulus_id)
                .map(|&m| (src, m))
                .ok_or_else(|| SubjectiveError::MissingStimulus(e.stimulus_id.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePreference {
    pub src_id: String,
    pub factor: u32,
    /// Every method reaching the top MOS, in manifest order.
    pub best_methods: Vec<String>,
    pub best_mos: f64,
    pub tie: bool,
}

/// Best up-scaler per (source, factor) by MOS.
pub fn preference_per_image(
    mos: &BTreeMap<String, f64>,
    manifest: &DatasetManifest,
) -> Result<Vec<ImagePreference>> {
    Ok(upscaled_mos(mos, manifest)?
        .into_iter()
        .map(|((src, factor), methods)| {
            let best = methods.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
            let best_methods: Vec<String> = methods
                .iter()
                .filter(|m| m.1 == best)
                .map(|m| m.0.to_string())
                .collect();
            ImagePreference {
                src_id: src.to_string(),
                factor,
                tie: best_methods.len() > 1,
                best_methods,
                best_mos: best,
            }
        })
        .collect())
}

/// How often each method was (co-)preferred, per factor. Every manifest
/// method appears, with zero counts where never preferred.
pub fn preference_counts(
    prefs: &[ImagePreference],
    manifest: &DatasetManifest,
) -> BTreeMap<String, BTreeMap<u32, usize>> {
    let factors: BTreeSet<u32> = prefs.iter().map(|p| p.factor).collect();
    let mut counts: BTreeMap<String, BTreeMap<u32, usize>> = manifest
        .methods()
        .into_iter()
        .map(|m| (m, factors.iter().map(|&f| (f, 0)).collect()))
        .collect();
    for p in prefs {
        for m in &p.best_methods {
            *counts.entry(m.clone()).or_default().entry(p.factor).or_default() += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceCount {
    pub factor: u32,
    pub yes: usize,
    pub no: usize,
    pub yes_percent: f64,
    pub no_percent: f64,
}

impl PreferenceCount {
    fn from_counts(factor: u32, yes: usize, no: usize) -> Self {
        let total = (yes + no).max(1) as f64;
        Self {
            factor,
            yes,
            no,
            yes_percent: 100.0 * yes as f64 / total,
            no_percent: 100.0 * no as f64 / total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceComparison {
    pub src_id: String,
    pub factor: u32,
    /// `mos(source) − max mos(up-scaled)`.
    pub margin: f64,
    pub source_preferred: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePreference {
    /// Source against the best up-scaled version per factor.
    pub best_of: Vec<PreferenceCount>,
    /// Source against each method separately, keyed by method name.
    pub per_method: BTreeMap<String, Vec<PreferenceCount>>,
    pub comparisons: Vec<SourceComparison>,
}

/// Count sources whose MOS strictly exceeds the up-scaled MOS.
pub fn source_preference(
    mos: &BTreeMap<String, f64>,
    manifest: &DatasetManifest,
) -> Result<SourcePreference> {
    let src = source_mos(mos, manifest)?;
    let groups = upscaled_mos(mos, manifest)?;
    let mut best_of: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut per_method: BTreeMap<String, BTreeMap<u32, (usize, usize)>> = BTreeMap::new();
    let mut comparisons = Vec::new();
    for ((src_id, factor), methods) in &groups {
        let s = *src
            .get(src_id)
            .ok_or_else(|| SubjectiveError::MissingStimulus(format!("{src_id} (source)")))?;
        let best = methods.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
        let preferred = s - best > 0.0;
        let c = best_of.entry(*factor).or_default();
        if preferred {
            c.0 += 1;
        } else {
            c.1 += 1;
        }
        comparisons.push(SourceComparison {
            src_id: src_id.to_string(),
            factor: *factor,
            margin: s - best,
            source_preferred: preferred,
        });
        for (method, m) in methods {
            let c = per_method
                .entry(method.to_string())
                .or_default()
                .entry(*factor)
                .or_default();
            if s - m > 0.0 {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
    }
    let to_rows = |m: BTreeMap<u32, (usize, usize)>| -> Vec<PreferenceCount> {
        m.into_iter()
            .map(|(f, (yes, no))| PreferenceCount::from_counts(f, yes, no))
            .collect()
    };
    Ok(SourcePreference {
        best_of: to_rows(best_of),
        per_method: per_method.into_iter().map(|(k, v)| (k, to_rows(v))).collect(),
        comparisons,
    })
}

/// Median MOS per up-scaling factor (1 = sources).
pub fn median_mos_by_factor(
    mos: &BTreeMap<String, f64>,
    manifest: &DatasetManifest,
) -> BTreeMap<u32, f64> {
    let mut by_factor: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for e in &manifest.entries {
        if let Some(&m) = mos.get(&e.stimulus_id) {
            by_factor.entry(e.factor).or_default().push(m);
        }
    }
    by_factor
        .into_iter()
        .map(|(f, mut v)| (f, median(&mut v)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub participants: usize,
    pub ratings: usize,
    pub votes: Option<VoteSummary>,
    /// Absent when fewer than two stimuli have two or more ratings.
    pub sos: Option<SosFit>,
    pub median_mos_by_factor: BTreeMap<u32, f64>,
    pub preference_counts: Option<BTreeMap<String, BTreeMap<u32, usize>>>,
    pub preferences: Option<Vec<ImagePreference>>,
    pub source_preference: Option<SourcePreference>,
    /// Why an optional section is absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Every subjective analysis over one rating set and its manifest. Sections
/// that cannot be computed are left out with a warning instead of failing.
pub fn analyze(records: &[RatingRecord], manifest: &DatasetManifest) -> (Vec<MosEntry>, AnalysisReport) {
    let entries = compute_mos(records);
    let mos = mos_map(&entries);
    fn keep<T>(warnings: &mut Vec<String>, section: &str, r: Result<T>) -> Option<T> {
        r.map_err(|e| warnings.push(format!("{section}: {e}"))).ok()
    }
    let mut warnings = Vec::new();
    let sos = keep(&mut warnings, "sos", fit_sos(&entries));
    let preferences = keep(&mut warnings, "preferences", preference_per_image(&mos, manifest));
    let source_pref = keep(&mut warnings, "source_preference", source_preference(&mos, manifest));
    let report = AnalysisReport {
        participants: participant_count(records),
        ratings: records.len(),
        votes: vote_summary(&entries),
        sos,
        median_mos_by_factor: median_mos_by_factor(&mos, manifest),
        preference_counts: preferences.as_ref().map(|p| preference_counts(p, manifest)),
        preferences,
        source_preference: source_pref,
        warnings,
    };
    (entries, report)
}
