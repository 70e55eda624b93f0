//! Run configuration: a JSON file whose every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uab_core::forest::{ForestConfig, DEFAULT_FOLDS};
use uab_core::upscalers::{load_specs, validate_specs, PipelineConfig, UpscalerSpec};

use crate::error::{Classify, CliError, Context};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Directory of source images.
    pub input: PathBuf,
    /// Generated references, low-resolution inputs and stimuli.
    pub work: PathBuf,
    /// Manifest, reports, tables and plots.
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            input: "input".into(),
            work: "work".into(),
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldGroup {
    /// Patches of every stimulus of one source share a fold.
    #[default]
    Source,
    /// Patches of one stimulus share a fold.
    Image,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Evenly spaced subset of each image's patches; `None` keeps all.
    pub max_patches_per_image: Option<usize>,
    pub fold_group: FoldGroup,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            max_patches_per_image: None,
            fold_group: FoldGroup::Source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    /// Inline up-scaler specs. Ignored when `upscalers_file` is set.
    pub upscalers: Vec<UpscalerSpec>,
    pub upscalers_file: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub patch_size: usize,
    pub crop_size: usize,
    pub forest: ForestConfig,
    pub folds: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub detect: DetectConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            upscalers: vec![UpscalerSpec::native_lanczos("lanczos")],
            upscalers_file: None,
            pipeline: PipelineConfig::default(),
            patch_size: 224,
            crop_size: 224,
            forest: ForestConfig::default(),
            folds: DEFAULT_FOLDS,
            seed: 0,
            jobs: 0,
            detect: DetectConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parse a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .usage()?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .usage()?;
        let base = path.parent().unwrap_or(Path::new(""));
        rebase(base, &mut cfg.paths.input);
        rebase(base, &mut cfg.paths.work);
        rebase(base, &mut cfg.paths.out);
        if let Some(f) = cfg.upscalers_file.as_mut() {
            rebase(base, f);
        }
        Ok(cfg)
    }

    /// The configured up-scalers, read from `upscalers_file` if given.
    pub fn upscaler_specs(&self) -> Result<Vec<UpscalerSpec>, CliError> {
        let specs = match &self.upscalers_file {
            Some(path) => load_specs(path)
                .with_context(|| format!("loading upscalers from {}", path.display()))
                .usage()?,
            None => self.upscalers.clone(),
        };
        validate_specs(&specs).context("invalid upscaler list").usage()?;
        Ok(specs)
    }

    /// Forest settings with the run seed applied.
    pub fn forest_config(&self) -> ForestConfig {
        self.forest.with_seed(self.seed)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.pipeline.validate().context("invalid pipeline").usage()?;
        self.forest.validate().context("invalid forest").usage()?;
        if self.patch_size == 0 || self.crop_size == 0 {
            return Err(CliError::usage_msg("patch_size and crop_size must be positive"));
        }
        if self.folds < 2 {
            return Err(CliError::usage_msg("folds must be at least 2"));
        }
        if self.detect.max_patches_per_image == Some(0) {
            return Err(CliError::usage_msg("max_patches_per_image must be positive"));
        }
        Ok(())
    }

    pub fn threads(&self) -> usize {
        if self.jobs == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.jobs
        }
    }
}
