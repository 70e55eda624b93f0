//! One module per subcommand, plus the file helpers they share.

pub mod analyze;
pub mod detect;
pub mod eval;
pub mod features;
pub mod prepare;
pub mod train;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Classify, CliError, Context};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.csv";
pub const FR_SCORES_FILE: &str = "fr_scores.csv";
pub const MOS_FILE: &str = "mos.csv";

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .runtime()
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .with_context(|| format!("serializing {}", path.display()))
        .runtime()?;
    text.push('\n');
    write_text(path, &text)
}

/// Stream a CSV through `body` into `path`.
pub(crate) fn write_csv<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> csv::Result<()>,
{
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let file = File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .runtime()?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .with_context(|| format!("writing {}", path.display()))
        .runtime()?;
    w.flush()
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

pub(crate) fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .context("starting worker pool")
        .runtime()
}

pub(crate) fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage_msg(format!("{what} not found: {}", path.display())))
    }
}

/// `explicit`, or `name` inside the output directory.
pub(crate) fn or_default(explicit: Option<&PathBuf>, out: &Path, name: &str) -> PathBuf {
    explicit.cloned().unwrap_or_else(|| out.join(name))
}

/// MOS per stimulus from either `mos.csv` or any CSV with `stimulus_id`
/// and `mos` columns.
pub fn load_mos(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    require_file(path, "MOS file")?;
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))
        .usage()?;
    let headers = reader
        .headers()
        .with_context(|| format!("reading header of {}", path.display()))
        .usage()?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id_col), Some(mos_col)) = (col("stimulus_id"), col("mos")) else {
        return Err(CliError::usage_msg(format!(
            "{}: expected `stimulus_id` and `mos` columns",
            path.display()
        )));
    };
    let mut out = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec
            .with_context(|| format!("{}: row {row}", path.display()))
            .usage()?;
        let mos: f64 = rec[mos_col]
            .trim()
            .parse()
            .with_context(|| format!("{}: row {row}: bad mos `{}`", path.display(), &rec[mos_col]))
            .usage()?;
        if out.insert(rec[id_col].to_string(), mos).is_some() {
            return Err(CliError::usage_msg(format!(
                "{}: row {row}: duplicate stimulus `{}`",
                path.display(),
                &rec[id_col]
            )));
        }
    }
    Ok(out)
}
