use serde::Serialize;
use uab_core::upscalers::{build_dataset, prepare_sources, Failure, UpscaleError};

use super::{thread_pool, write_json, MANIFEST_FILE};
use crate::config::RunConfig;
use crate::error::{CliError, Status};

pub const REPORT_FILE: &str = "prepare_report.json";

#[derive(Debug, Serialize)]
pub struct PrepareReport {
    pub sources: usize,
    pub upscalers: Vec<String>,
    pub factors: Vec<u32>,
    pub entries: usize,
    pub failures: Vec<Failure>,
}

fn classify(e: UpscaleError) -> CliError {
    match e {
        UpscaleError::InvalidSpec { .. } | UpscaleError::NoSources(_) => {
            CliError::Usage(e.into())
        }
        e => CliError::Runtime(e.into()),
    }
}

/// Normalize the sources, run every up-scaler and write the manifest.
pub fn run(cfg: &RunConfig) -> Result<Status, CliError> {
    cfg.validate()?;
    let specs = cfg.upscaler_specs()?;
    if !cfg.paths.input.is_dir() {
        return Err(CliError::usage_msg(format!(
            "input directory not found: {}",
            cfg.paths.input.display()
        )));
    }
    let threads = cfg.threads();
    let pool = thread_pool(threads)?;
    let prepared = pool
        .install(|| prepare_sources(&cfg.paths.input, &cfg.paths.work, &cfg.pipeline))
        .map_err(classify)?;
    log::info!("{} sources prepared", prepared.sources.len());
    let build = build_dataset(
        &prepared.sources,
        &specs,
        &cfg.pipeline.factors,
        &cfg.paths.work,
        threads,
    )
    .map_err(classify)?;

    let manifest_path = cfg.paths.out.join(MANIFEST_FILE);
    super::ensure_dir(&cfg.paths.out)?;
    build
        .manifest
        .save(&manifest_path)
        .map_err(|e| CliError::Runtime(e.into()))?;
    let mut failures = prepared.failures;
    failures.extend(build.failures);
    let report = PrepareReport {
        sources: prepared.sources.len(),
        upscalers: specs.iter().map(|s| s.name.clone()).collect(),
        factors: cfg.pipeline.factors.clone(),
        entries: build.manifest.entries.len(),
        failures,
    };
    write_json(&cfg.paths.out.join(REPORT_FILE), &report)?;
    log::info!(
        "manifest with {} entries written to {}",
        report.entries,
        manifest_path.display()
    );
    for f in &report.failures {
        log::warn!("failed: {}: {}", f.item, f.error);
    }
    Ok(Status::from_failures(report.failures.len()))
}
