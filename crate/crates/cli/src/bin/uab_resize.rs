//! `uab-resize [--filter NAME] <input> <output> <scale>`
//!
//! Stand-in external up-scaler for pipelines and tests: enlarges an image by
//! an integer factor with one of the `image` crate's filters.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use image::imageops::FilterType;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Filter {
    Nearest,
    Triangle,
    CatmullRom,
    Gaussian,
    Lanczos3,
}

impl From<Filter> for FilterType {
    fn from(f: Filter) -> Self {
        match f {
            Filter::Nearest => FilterType::Nearest,
            Filter::Triangle => FilterType::Triangle,
            Filter::CatmullRom => FilterType::CatmullRom,
            Filter::Gaussian => FilterType::Gaussian,
            Filter::Lanczos3 => FilterType::Lanczos3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "uab-resize", about = "Integer-factor image enlargement")]
struct Args {
    #[arg(long, value_enum, default_value = "catmull-rom")]
    filter: Filter,
    input: PathBuf,
    output: PathBuf,
    scale: u32,
}

fn run(args: &Args) -> anyhow::Result<()> {
    anyhow::ensure!(args.scale >= 1, "scale must be at least 1");
    let img = image::open(&args.input)?.to_rgb8();
    let (w, h) = img.dimensions();
    let out = image::imageops::resize(&img, w * args.scale, h * args.scale, args.filter.into());
    out.save(&args.output)?;
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("uab-resize: {e:#}");
            ExitCode::FAILURE
        }
    }
}
