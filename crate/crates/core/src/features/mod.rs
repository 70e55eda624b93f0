//! Per-image signal features used for characterization and as inputs to
//! the appeal random forest.
//!
//! Degenerate inputs such as constant images yield 0 rather than an error,
//! so that corpus runs never abort. Size preconditions are still enforced.

mod edges;
mod spectral;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::{self, sobel_at};
use crate::imaging::{to_luma, ImageBuffer, Plane};

pub use edges::{
    blur_detection_probability, blur_strength, cpbd, cpbd_report, edge_widths, CpbdReport,
    EdgePixel, CPBD_BETA, CPBD_BLOCK, CPBD_DETECTION_THRESHOLD, EDGE_STEP_THRESHOLD,
};
pub use spectral::{fft_feature, magnitude_spectrum, HIGH_BAND_RADIUS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("image {width}x{height} is smaller than the required {min}x{min}")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
}

pub type Result<T> = std::result::Result<T, FeatureError>;

fn require(luma: &Plane, min: usize) -> Result<()> {
    if luma.width() < min || luma.height() < min {
        return Err(FeatureError::TooSmall {
            width: luma.width(),
            height: luma.height(),
            min,
        });
    }
    Ok(())
}

fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Spatial information: population std of the Sobel magnitude over interior pixels.
pub fn si(luma: &Plane) -> Result<f64> {
    require(luma, 3)?;
    let (w, h) = (luma.width(), luma.height());
    let mut mags = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let (gx, gy) = sobel_at(luma, x, y);
            mags.push((gx * gx + gy * gy).sqrt());
        }
    }
    Ok(population_std(mags.iter().copied()))
}

/// Hasler–Süsstrunk colorfulness with population statistics.
pub fn colorfulness(img: &ImageBuffer) -> f64 {
    let n = (img.width() * img.height()) as f64;
    let (mut s_rg, mut s_yb) = (0.0, 0.0);
    for [r, g, b] in img.rgb_pixels() {
        let (r, g, b) = (r as f64, g as f64, b as f64);
        s_rg += r - g;
        s_yb += 0.5 * (r + g) - b;
    }
    let (m_rg, m_yb) = (s_rg / n, s_yb / n);
    let (mut v_rg, mut v_yb) = (0.0, 0.0);
    for [r, g, b] in img.rgb_pixels() {
        let (r, g, b) = (r as f64, g as f64, b as f64);
        v_rg += (r - g - m_rg).powi(2);
        v_yb += (0.5 * (r + g) - b - m_yb).powi(2);
    }
    (v_rg / n + v_yb / n).sqrt() + 0.3 * (m_rg * m_rg + m_yb * m_yb).sqrt()
}

pub const CRETE_TAPS: usize = 9;

/// Crete re-blur metric in [0,1]; higher is blurrier, 0 for flat images.
pub fn blur(luma: &Plane) -> Result<f64> {
    require(luma, CRETE_TAPS)?;
    let avg = vec![1.0 / CRETE_TAPS as f64; CRETE_TAPS];
    let blur_v = filters::convolve_axis(luma, &avg, filters::Axis::Vertical);
    let blur_h = filters::convolve_axis(luma, &avg, filters::Axis::Horizontal);
    let (w, h) = (luma.width(), luma.height());
    let (mut sf_v, mut sv_v, mut sf_h, mut sv_h) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if y > 0 {
                let df = (luma.get(x, y) - luma.get(x, y - 1)).abs();
                let db = (blur_v.get(x, y) - blur_v.get(x, y - 1)).abs();
                sf_v += df;
                sv_v += (df - db).max(0.0);
            }
            if x > 0 {
                let df = (luma.get(x, y) - luma.get(x - 1, y)).abs();
                let db = (blur_h.get(x, y) - blur_h.get(x - 1, y)).abs();
                sf_h += df;
                sv_h += (df - db).max(0.0);
            }
        }
    }
    let direction = |sf: f64, sv: f64| if sf > 0.0 { (sf - sv) / sf } else { 0.0 };
    Ok(direction(sf_v, sv_v).max(direction(sf_h, sv_h)).clamp(0.0, 1.0))
}

pub const NOISE_SIGMA: f64 = 1.5;
/// Consistency constant turning a median absolute deviation into a Gaussian σ.
pub const MAD_TO_SIGMA: f64 = 1.4826;

/// Robust noise σ of the high-pass residual `luma - G_1.5 * luma`.
pub fn noise(luma: &Plane) -> Result<f64> {
    require(luma, 9)?;
    let smooth = filters::gaussian_blur(luma, NOISE_SIGMA);
    let mut residual: Vec<f64> = luma
        .data()
        .iter()
        .zip(smooth.data())
        .map(|(a, b)| a - b)
        .collect();
    let med = filters::median(&mut residual);
    let mut dev: Vec<f64> = residual.iter().map(|r| (r - med).abs()).collect();
    Ok(MAD_TO_SIGMA * filters::median(&mut dev))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicStats {
    pub contrast: f64,
    pub saturation: f64,
    pub tone: f64,
}

/// Luma spread, mean HSV saturation and mean luma, each normalized to [0,1].
pub fn basic_stats(img: &ImageBuffer) -> BasicStats {
    let luma = to_luma(img);
    let n = luma.data().len() as f64;
    let saturation = img
        .rgb_pixels()
        .map(|p| {
            let max = *p.iter().max().unwrap() as f64;
            let min = *p.iter().min().unwrap() as f64;
            if max == 0.0 {
                0.0
            } else {
                (max - min) / max
            }
        })
        .sum::<f64>()
        / n;
    BasicStats {
        contrast: population_std(luma.data().iter().copied()) / 255.0,
        saturation,
        tone: luma.data().iter().sum::<f64>() / n / 255.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    Cpbd,
    Si,
    Fft,
    Noise,
    Blur,
    BlurStrength,
    Saturation,
    Colorfulness,
    Contrast,
    Tone,
}

impl FeatureName {
    /// Column order of the feature CSV and of forest inputs.
    pub const ALL: [FeatureName; 10] = [
        FeatureName::Cpbd,
        FeatureName::Si,
        FeatureName::Fft,
        FeatureName::Noise,
        FeatureName::Blur,
        FeatureName::BlurStrength,
        FeatureName::Saturation,
        FeatureName::Colorfulness,
        FeatureName::Contrast,
        FeatureName::Tone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureName::Cpbd => "cpbd",
            FeatureName::Si => "si",
            FeatureName::Fft => "fft",
            FeatureName::Noise => "noise",
            FeatureName::Blur => "blur",
            FeatureName::BlurStrength => "blur_strength",
            FeatureName::Saturation => "saturation",
            FeatureName::Colorfulness => "colorfulness",
            FeatureName::Contrast => "contrast",
            FeatureName::Tone => "tone",
        }
    }
}

impl std::fmt::Display for FeatureName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The ten features of one stimulus. `None` marks a feature that could not
/// be computed; the reason is kept in `diagnostics`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub stimulus_id: String,
    pub cpbd: Option<f64>,
    pub si: Option<f64>,
    pub fft: Option<f64>,
    pub noise: Option<f64>,
    pub blur: Option<f64>,
    pub blur_strength: Option<f64>,
    pub saturation: Option<f64>,
    pub colorfulness: Option<f64>,
    pub contrast: Option<f64>,
    pub tone: Option<f64>,
    #[serde(skip)]
    pub diagnostics: Vec<String>,
}

impl FeatureVector {
    pub fn empty(stimulus_id: impl Into<String>) -> Self {
        Self {
            stimulus_id: stimulus_id.into(),
            ..Self::default()
        }
    }

    pub fn get(&self, name: FeatureName) -> Option<f64> {
        match name {
            FeatureName::Cpbd => self.cpbd,
            FeatureName::Si => self.si,
            FeatureName::Fft => self.fft,
            FeatureName::Noise => self.noise,
            FeatureName::Blur => self.blur,
            FeatureName::BlurStrength => self.blur_strength,
            FeatureName::Saturation => self.saturation,
            FeatureName::Colorfulness => self.colorfulness,
            FeatureName::Contrast => self.contrast,
            FeatureName::Tone => self.tone,
        }
    }

    fn slot(&mut self, name: FeatureName) -> &mut Option<f64> {
        match name {
            FeatureName::Cpbd => &mut self.cpbd,
            FeatureName::Si => &mut self.si,
            FeatureName::Fft => &mut self.fft,
            FeatureName::Noise => &mut self.noise,
            FeatureName::Blur => &mut self.blur,
            FeatureName::BlurStrength => &mut self.blur_strength,
            FeatureName::Saturation => &mut self.saturation,
            FeatureName::Colorfulness => &mut self.colorfulness,
            FeatureName::Contrast => &mut self.contrast,
            FeatureName::Tone => &mut self.tone,
        }
    }

    pub fn set(&mut self, name: FeatureName, value: Result<f64>) {
        match value {
            Ok(v) => *self.slot(name) = Some(v),
            Err(e) => {
                *self.slot(name) = None;
                self.diagnostics.push(format!("{name}: {e}"));
            }
        }
    }

    /// Values in [`FeatureName::ALL`] order, NaN for missing.
    pub fn to_row(&self) -> Vec<f64> {
        FeatureName::ALL
            .iter()
            .map(|&n| self.get(n).unwrap_or(f64::NAN))
            .collect()
    }
}

/// Compute all ten features of one image.
pub fn extract_features(img: &ImageBuffer, stimulus_id: &str) -> FeatureVector {
    let luma = to_luma(img);
    let mut fv = FeatureVector::empty(stimulus_id);
    fv.set(FeatureName::Cpbd, cpbd(&luma));
    fv.set(FeatureName::Si, si(&luma));
    fv.set(FeatureName::Fft, fft_feature(&luma));
    fv.set(FeatureName::Noise, noise(&luma));
    fv.set(FeatureName::Blur, blur(&luma));
    fv.set(FeatureName::BlurStrength, blur_strength(&luma));
    let stats = basic_stats(img);
    fv.set(FeatureName::Saturation, Ok(stats.saturation));
    fv.set(FeatureName::Colorfulness, Ok(colorfulness(img)));
    fv.set(FeatureName::Contrast, Ok(stats.contrast));
    fv.set(FeatureName::Tone, Ok(stats.tone));
    fv
}

pub fn feature_csv_header() -> Vec<&'static str> {
    let mut h = vec!["stimulus_id"];
    h.extend(FeatureName::ALL.iter().map(|n| n.as_str()));
    h
}

/// Write the feature CSV; missing values become empty cells.
pub fn write_feature_csv<W: Write>(rows: &[FeatureVector], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_csv_header())?;
    for fv in rows {
        let mut rec = vec![fv.stimulus_id.clone()];
        rec.extend(
            FeatureName::ALL
                .iter()
                .map(|&n| fv.get(n).map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum FeatureCsvError {
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
}

pub fn read_feature_csv(path: impl AsRef<Path>) -> std::result::Result<Vec<FeatureVector>, FeatureCsvError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| FeatureCsvError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let parse_err = |row: u64, message: String| FeatureCsvError::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let expected = feature_csv_header();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(parse_err(1, format!("expected header {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        let mut fv = FeatureVector::empty(&rec[0]);
        for (j, &name) in FeatureName::ALL.iter().enumerate() {
            let cell = rec[j + 1].trim();
            *fv.slot(name) = if cell.is_empty() {
                None
            } else {
                Some(
                    cell.parse::<f64>()
                        .map_err(|e| parse_err(row, format!("{name}: {e}")))?,
                )
            };
        }
        out.push(fv);
    }
    Ok(out)
}
