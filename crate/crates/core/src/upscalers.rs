//! Stimulus-set construction: normalize sources to a common height, derive
//! the low-resolution inputs, run every configured up-scaler on them and
//! record the result in a [`DatasetManifest`].
//!
//! External up-scalers are plain subprocesses. Their argument template is
//! substituted verbatim (`{input}`, `{output}`, `{scale}`) and executed
//! without a shell.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{self, ImagingError};

/// Method label of the factor-1 (hidden reference) stimuli.
pub const SOURCE_METHOD: &str = "source";

pub const DEFAULT_TIMEOUT_SECS: u64 = 600;

#[derive(Debug, Error)]
pub enum UpscaleError {
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid upscaler spec `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("upscaler `{name}` cannot produce scale x{scale}")]
    UnsupportedScale { name: String, scale: u32 },
    #[error("upscaler `{name}` failed: {message}")]
    Process { name: String, message: String },
    #[error("upscaler `{name}` timed out after {secs} s")]
    Timeout { name: String, secs: u64 },
    #[error("expected {expected:?} output, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("no decodable source images in {0}")]
    NoSources(PathBuf),
}

pub type Result<T> = std::result::Result<T, UpscaleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpscalerKind {
    NativeLanczos,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Direct,
    /// Always up-scale by four; a requested x2 is then Lanczos-downscaled by two.
    X4ThenDownscale,
}

fn default_scales() -> Vec<u32> {
    vec![2, 4]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpscalerSpec {
    pub name: String,
    pub kind: UpscalerKind,
    #[serde(default)]
    pub command_template: Vec<String>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_scales")]
    pub supported_scales: Vec<u32>,
    /// Per-invocation limit, defaults to [`DEFAULT_TIMEOUT_SECS`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
}

impl UpscalerSpec {
    pub fn native_lanczos(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: UpscalerKind::NativeLanczos,
            command_template: Vec::new(),
            strategy: Strategy::Direct,
            supported_scales: default_scales(),
            timeout_secs: None,
        }
    }

    pub fn external(name: impl Into<String>, command_template: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: UpscalerKind::External,
            command_template,
            strategy: Strategy::Direct,
            supported_scales: default_scales(),
            timeout_secs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| {
            Err(UpscaleError::InvalidSpec {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.name.is_empty() || self.name == SOURCE_METHOD {
            return invalid("name must be non-empty and not `source`");
        }
        if self
            .name
            .chars()
            .any(|c| !(c.is_ascii_alphanumeric() || c == '-' || c == '.'))
        {
            return invalid("name may only contain ASCII letters, digits, `-` and `.`");
        }
        if self.kind == UpscalerKind::External && self.command_template.is_empty() {
            return invalid("external upscalers need a command_template");
        }
        if self.supported_scales.iter().any(|s| *s != 2 && *s != 4) {
            return invalid("supported_scales must be a subset of {2, 4}");
        }
        if self.strategy == Strategy::X4ThenDownscale && !self.supported_scales.contains(&4) {
            return invalid("x4_then_downscale requires supported scale 4");
        }
        Ok(())
    }

    /// Whether a stimulus at `scale` can be produced, natively or via the strategy.
    pub fn covers(&self, scale: u32) -> bool {
        self.supported_scales.contains(&scale)
            || (self.strategy == Strategy::X4ThenDownscale && scale == 2)
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs.unwrap_or(DEFAULT_TIMEOUT_SECS))
    }
}

/// Load a JSON list of up-scaler specs and validate each.
pub fn load_specs(path: impl AsRef<Path>) -> Result<Vec<UpscalerSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| UpscaleError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let specs: Vec<UpscalerSpec> =
        serde_json::from_str(&text).map_err(|e| UpscaleError::InvalidSpec {
            name: path.display().to_string(),
            reason: e.to_string(),
        })?;
    validate_specs(&specs)?;
    Ok(specs)
}

pub fn validate_specs(specs: &[UpscalerSpec]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in specs {
        s.validate()?;
        if !seen.insert(&s.name) {
            return Err(UpscaleError::InvalidSpec {
                name: s.name.clone(),
                reason: "duplicate name".into(),
            });
        }
    }
    Ok(())
}

/// Substitute `{input}`, `{output}` and `{scale}` in every argument.
pub fn render_command(template: &[String], input: &Path, output: &Path, scale: u32) -> Vec<String> {
    template
        .iter()
        .map(|arg| {
            arg.replace("{input}", &input.to_string_lossy())
                .replace("{output}", &output.to_string_lossy())
                .replace("{scale}", &scale.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub width: usize,
    pub height: usize,
}

fn run_process(name: &str, argv: &[String], timeout: Duration) -> Result<()> {
    let (program, args) = argv.split_first().ok_or_else(|| UpscaleError::InvalidSpec {
        name: name.to_string(),
        reason: "empty command".into(),
    })?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| UpscaleError::Process {
            name: name.to_string(),
            message: format!("cannot spawn `{program}`: {e}"),
        })?;
    let mut stderr = child.stderr.take().expect("stderr is piped");
    let reader = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr.read_to_string(&mut buf);
        buf
    });
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(UpscaleError::Timeout {
                    name: name.to_string(),
                    secs: timeout.as_secs(),
                });
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                return Err(UpscaleError::Process {
                    name: name.to_string(),
                    message: e.to_string(),
                })
            }
        }
    };
    let stderr = reader.join().unwrap_or_default();
    if !status.success() {
        let tail: String = stderr.lines().last().unwrap_or("").chars().take(300).collect();
        return Err(UpscaleError::Process {
            name: name.to_string(),
            message: format!("{status}; {tail}"),
        });
    }
    Ok(())
}

fn check_dims(path: &Path, expected: (usize, usize)) -> Result<ImageMeta> {
    if !path.exists() {
        return Err(UpscaleError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "output was not written"),
        });
    }
    let actual = imaging::dimensions(path)?;
    if actual != expected {
        return Err(UpscaleError::DimensionMismatch { expected, actual });
    }
    Ok(ImageMeta {
        width: actual.0,
        height: actual.1,
    })
}

fn downscale_file(from: &Path, to: &Path, size: (usize, usize)) -> Result<()> {
    let img = imaging::decode(from)?;
    let out = imaging::resize_lanczos(&img, size.0, size.1)?;
    imaging::encode_png(&out, to)?;
    Ok(())
}

/// Up-scale `input` by `scale` into `output`, verifying the output size.
pub fn run_upscaler(
    spec: &UpscalerSpec,
    input: &Path,
    scale: u32,
    output: &Path,
) -> Result<ImageMeta> {
    if !spec.covers(scale) {
        return Err(UpscaleError::UnsupportedScale {
            name: spec.name.clone(),
            scale,
        });
    }
    let (w, h) = imaging::dimensions(input)?;
    let expected = (w * scale as usize, h * scale as usize);
    match spec.kind {
        UpscalerKind::NativeLanczos => {
            let img = imaging::decode(input)?;
            let out = imaging::resize_lanczos(&img, expected.0, expected.1)?;
            imaging::encode_png(&out, output)?;
        }
        UpscalerKind::External => {
            let via_x4 = spec.strategy == Strategy::X4ThenDownscale && scale != 4;
            if via_x4 {
                let intermediate = output.with_extension("x4.png");
                let argv = render_command(&spec.command_template, input, &intermediate, 4);
                run_process(&spec.name, &argv, spec.timeout())?;
                check_dims(&intermediate, (w * 4, h * 4))?;
                let res = downscale_file(&intermediate, output, expected);
                let _ = std::fs::remove_file(&intermediate);
                res?;
            } else {
                let argv = render_command(&spec.command_template, input, output, scale);
                run_process(&spec.name, &argv, spec.timeout())?;
            }
        }
    }
    check_dims(output, expected)
}

/// Heights of the reference and of the up-scaler inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub common_height: usize,
    pub factors: Vec<u32>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            common_height: 1080,
            factors: vec![2, 4],
        }
    }
}

impl PipelineConfig {
    /// Height of the image fed to an up-scaler of `factor`.
    pub fn input_height(&self, factor: u32) -> usize {
        self.common_height / factor as usize
    }

    pub fn validate(&self) -> Result<()> {
        for &f in &self.factors {
            if f != 2 && f != 4 {
                return Err(UpscaleError::InvalidSpec {
                    name: "pipeline".into(),
                    reason: format!("unsupported factor {f}"),
                });
            }
            if !self.common_height.is_multiple_of(f as usize) || self.input_height(f) == 0 {
                return Err(UpscaleError::InvalidSpec {
                    name: "pipeline".into(),
                    reason: format!(
                        "common height {} is not divisible by factor {f}",
                        self.common_height
                    ),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LowResInput {
    pub factor: u32,
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedSource {
    pub src_id: String,
    pub reference: PathBuf,
    pub width: usize,
    pub height: usize,
    pub inputs: Vec<LowResInput>,
}

impl PreparedSource {
    pub fn input(&self, factor: u32) -> Option<&LowResInput> {
        self.inputs.iter().find(|i| i.factor == factor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub item: String,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct Prepared {
    pub sources: Vec<PreparedSource>,
    pub failures: Vec<Failure>,
}

pub fn stimulus_id(src_id: &str, method: &str, factor: u32) -> String {
    format!("{src_id}_{method}_x{factor}")
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| UpscaleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn stimuli_dir(work_dir: &Path) -> PathBuf {
    work_dir.join("stimuli")
}

pub fn inputs_dir(work_dir: &Path) -> PathBuf {
    work_dir.join("inputs")
}

fn prepare_one(path: &Path, src_id: &str, work_dir: &Path, cfg: &PipelineConfig) -> Result<PreparedSource> {
    let img = imaging::decode(path)?;
    let reference = imaging::rescale_to_height(&img, cfg.common_height)?;
    let ref_path = stimuli_dir(work_dir).join(format!(
        "{}.png",
        stimulus_id(src_id, SOURCE_METHOD, 1)
    ));
    imaging::encode_png(&reference, &ref_path)?;
    let mut inputs = Vec::with_capacity(cfg.factors.len());
    for &factor in &cfg.factors {
        let h = cfg.input_height(factor);
        let low = imaging::rescale_to_height(&reference, h)?;
        let low_path = inputs_dir(work_dir).join(format!("{src_id}_{h}p.png"));
        imaging::encode_png(&low, &low_path)?;
        inputs.push(LowResInput {
            factor,
            path: low_path,
            width: low.width(),
            height: low.height(),
        });
    }
    Ok(PreparedSource {
        src_id: src_id.to_string(),
        reference: ref_path,
        width: reference.width(),
        height: reference.height(),
        inputs,
    })
}

/// Normalize every PNG/JPEG in `input_dir` and write the reference and
/// low-resolution inputs under `work_dir`. Unreadable files are reported,
/// not fatal.
pub fn prepare_sources(
    input_dir: &Path,
    work_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<Prepared> {
    cfg.validate()?;
    let read = std::fs::read_dir(input_dir).map_err(|source| UpscaleError::Io {
        path: input_dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = read
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    create_dir(&stimuli_dir(work_dir))?;
    create_dir(&inputs_dir(work_dir))?;

    let mut ids = BTreeSet::new();
    let mut jobs = Vec::new();
    let mut failures = Vec::new();
    for path in files {
        let src_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !ids.insert(src_id.clone()) {
            failures.push(Failure {
                item: path.display().to_string(),
                error: format!("duplicate source id `{src_id}`"),
            });
            continue;
        }
        jobs.push((path, src_id));
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(path, id)| (path, prepare_one(path, id, work_dir, cfg)))
        .collect();
    let mut sources = Vec::new();
    for (path, res) in results {
        match res {
            Ok(s) => sources.push(s),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                failures.push(Failure {
                    item: path.display().to_string(),
                    error: e.to_string(),
                })
            }
        }
    }
    if sources.is_empty() {
        return Err(UpscaleError::NoSources(input_dir.to_path_buf()));
    }
    Ok(Prepared { sources, failures })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stimulus_id: String,
    pub src_id: String,
    pub method: String,
    pub factor: u32,
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
}

impl ManifestEntry {
    pub fn is_source(&self) -> bool {
        self.factor == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingEntry {
    pub stimulus_id: String,
    pub src_id: String,
    pub method: String,
    pub factor: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<MissingEntry>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate stimulus id `{0}`")]
    DuplicateId(String),
    #[error("source `{src_id}` has {count} factor-1 entries")]
    Reference { src_id: String, count: usize },
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> std::result::Result<Self, ManifestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::result::Result<(), ManifestError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Unique ids and exactly one factor-1 entry per source.
    pub fn validate(&self) -> std::result::Result<(), ManifestError> {
        let mut ids = BTreeSet::new();
        let mut refs: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &self.entries {
            if !ids.insert(e.stimulus_id.as_str()) {
                return Err(ManifestError::DuplicateId(e.stimulus_id.clone()));
            }
            let c = refs.entry(e.src_id.as_str()).or_default();
            if e.is_source() {
                *c += 1;
            }
        }
        if let Some((src, count)) = refs.into_iter().find(|(_, c)| *c != 1) {
            return Err(ManifestError::Reference {
                src_id: src.to_string(),
                count,
            });
        }
        Ok(())
    }

    pub fn get(&self, stimulus_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.stimulus_id == stimulus_id)
    }

    pub fn index(&self) -> BTreeMap<&str, &ManifestEntry> {
        self.entries
            .iter()
            .map(|e| (e.stimulus_id.as_str(), e))
            .collect()
    }

    /// Up-scaler names in first-appearance order.
    pub fn methods(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.entries
            .iter()
            .filter(|e| !e.is_source() && seen.insert(e.method.clone()))
            .map(|e| e.method.clone())
            .collect()
    }

    /// The factor-1 entry of each source.
    pub fn references(&self) -> BTreeMap<&str, &ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.is_source())
            .map(|e| (e.src_id.as_str(), e))
            .collect()
    }
}

/// Closed-form manifest size when every up-scaler covers both factors.
pub fn expected_entry_count(n_sources: usize, n_upscalers: usize) -> usize {
    n_sources * (2 * n_upscalers + 1)
}

#[derive(Debug)]
pub struct DatasetBuild {
    pub manifest: DatasetManifest,
    pub failures: Vec<Failure>,
}

/// Run every (source, up-scaler, factor) job with at most `jobs` workers and
/// assemble the manifest in deterministic order.
pub fn build_dataset(
    sources: &[PreparedSource],
    specs: &[UpscalerSpec],
    factors: &[u32],
    work_dir: &Path,
    jobs: usize,
) -> Result<DatasetBuild> {
    validate_specs(specs)?;
    create_dir(&stimuli_dir(work_dir))?;
    struct Job<'a> {
        src: &'a PreparedSource,
        spec: &'a UpscalerSpec,
        factor: u32,
    }
    let mut todo = Vec::new();
    for src in sources {
        for spec in specs {
            for &factor in factors {
                if spec.covers(factor) {
                    todo.push(Job { src, spec, factor });
                } else {
                    log::info!("{} does not cover x{factor}; skipped", spec.name);
                }
            }
        }
    }
    let run = |job: &Job| {
        let id = stimulus_id(&job.src.src_id, &job.spec.name, job.factor);
        let out = stimuli_dir(work_dir).join(format!("{id}.png"));
        let res = match job.src.input(job.factor) {
            Some(input) => run_upscaler(job.spec, &input.path, job.factor, &out),
            None => Err(UpscaleError::UnsupportedScale {
                name: job.spec.name.clone(),
                scale: job.factor,
            }),
        };
        (id, out, res)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| UpscaleError::Process {
            name: "worker pool".into(),
            message: e.to_string(),
        })?;
    let results: Vec<_> = pool.install(|| todo.par_iter().map(run).collect());

    let mut by_src: BTreeMap<&str, Vec<ManifestEntry>> = BTreeMap::new();
    let mut manifest = DatasetManifest::default();
    let mut failures = Vec::new();
    for (job, (id, out, res)) in todo.iter().zip(results) {
        match res {
            Ok(meta) => by_src.entry(&job.src.src_id).or_default().push(ManifestEntry {
                stimulus_id: id,
                src_id: job.src.src_id.clone(),
                method: job.spec.name.clone(),
                factor: job.factor,
                path: out,
                width: meta.width,
                height: meta.height,
            }),
            Err(e) => {
                log::warn!("{id}: {e}");
                failures.push(Failure {
                    item: id.clone(),
                    error: e.to_string(),
                });
                manifest.missing.push(MissingEntry {
                    stimulus_id: id,
                    src_id: job.src.src_id.clone(),
                    method: job.spec.name.clone(),
                    factor: job.factor,
                    reason: e.to_string(),
                });
            }
        }
    }
    for src in sources {
        manifest.entries.push(ManifestEntry {
            stimulus_id: stimulus_id(&src.src_id, SOURCE_METHOD, 1),
            src_id: src.src_id.clone(),
            method: SOURCE_METHOD.to_string(),
            factor: 1,
            path: src.reference.clone(),
            width: src.width,
            height: src.height,
        });
        if let Some(entries) = by_src.remove(src.src_id.as_str()) {
            manifest.entries.extend(entries);
        }
    }
    Ok(DatasetBuild { manifest, failures })
}
