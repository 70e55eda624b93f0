//! Command-line driver: dataset preparation, feature extraction, subjective
//! analysis, appeal regression, up-scaler detection and evaluation.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, Status};

#[derive(Debug, Parser)]
#[command(name = "uab", version, about = "Up-scaling appeal benchmark")]
pub struct Cli {
    /// JSON run configuration; every field is optional.
    #[arg(long, global = true, env = "UAB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seed for fold assignment and forests.
    #[arg(long, global = true, env = "UAB_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "UAB_JOBS")]
    pub jobs: Option<usize>,
    /// Output directory for manifests, reports and plots.
    #[arg(long, global = true, env = "UAB_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize sources, run the up-scalers and write the manifest.
    Prepare {
        /// Source image directory.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Directory for generated images.
        #[arg(long)]
        work: Option<PathBuf>,
        /// JSON list of up-scaler specs.
        #[arg(long)]
        upscalers: Option<PathBuf>,
    },
    /// Signal features and full-reference scores of every stimulus.
    Features {
        /// Defaults to <out>/manifest.json
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also save a centered crop of each stimulus.
        #[arg(long)]
        export_crops: bool,
    },
    /// MOS, SOS fit, preference counts and plots from raw ratings.
    Analyze {
        /// CSV with participant_id,stimulus_id,rating.
        #[arg(long)]
        ratings: PathBuf,
        /// Defaults to <out>/manifest.json
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Cross-validated random-forest appeal regression.
    Train {
        /// Defaults to <out>/features.csv
        #[arg(long)]
        features: Option<PathBuf>,
        /// Defaults to <out>/mos.csv
        #[arg(long)]
        mos: Option<PathBuf>,
    },
    /// Patch-level up-scaler detection.
    Detect {
        /// Defaults to <out>/manifest.json
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Save the patches used for detection.
        #[arg(long)]
        export_patches: bool,
    },
    /// Correlation or classification metrics of a prediction CSV.
    Eval {
        /// Prediction CSV; the format is detected from its header
        #[arg(long)]
        predictions: PathBuf,
        /// Truth MOS CSV (stimulus_id, mos), overriding any truth column
        #[arg(long)]
        mos: Option<PathBuf>,
    },
}

impl Cli {
    /// The config file (or defaults) with global flags applied on top.
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        if let Some(out) = &self.out {
            cfg.paths.out = out.clone();
        }
        if let Command::Prepare {
            input,
            work,
            upscalers,
        } = &self.command
        {
            if let Some(p) = input {
                cfg.paths.input = p.clone();
            }
            if let Some(p) = work {
                cfg.paths.work = p.clone();
            }
            if let Some(p) = upscalers {
                cfg.upscalers_file = Some(p.clone());
            }
        }
        Ok(cfg)
    }

    pub fn execute(&self) -> Result<Status, CliError> {
        use commands::*;
        let cfg = self.run_config()?;
        match &self.command {
            Command::Prepare { .. } => prepare::run(&cfg),
            Command::Features {
                manifest,
                export_crops,
            } => features::run(
                &cfg,
                &features::FeatureArgs {
                    manifest: manifest.clone(),
                    export_crops: *export_crops,
                },
            ),
            Command::Analyze { ratings, manifest } => analyze::run(
                &cfg,
                &analyze::AnalyzeArgs {
                    ratings: ratings.clone(),
                    manifest: manifest.clone(),
                },
            ),
            Command::Train { features, mos } => train::run(
                &cfg,
                &train::TrainArgs {
                    features: features.clone(),
                    mos: mos.clone(),
                },
            ),
            Command::Detect {
                manifest,
                export_patches,
            } => detect::run(
                &cfg,
                &detect::DetectArgs {
                    manifest: manifest.clone(),
                    export_patches: *export_patches,
                },
            ),
            Command::Eval { predictions, mos } => eval::run(
                &cfg,
                &eval::EvalArgs {
                    predictions: predictions.clone(),
                    mos: mos.clone(),
                },
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 3, "jobs": 2}"#).unwrap();
        let cli = Cli::try_parse_from([
            "uab",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
            "train",
        ])
        .unwrap();
        let cfg = cli.run_config().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.jobs, 2);
    }

    #[test]
    fn global_flags_follow_the_subcommand_too() {
        let cli = Cli::try_parse_from(["uab", "eval", "--predictions", "p.csv", "--out", "o"]).unwrap();
        assert_eq!(cli.run_config().unwrap().paths.out, PathBuf::from("o"));
    }
}
