//! Full-reference metrics on luma: PSNR, SSIM and MS-SSIM.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalmetrics::ScoreRecord;
use crate::filters::gaussian_kernel;
use crate::imaging::{to_luma, ImageBuffer, Plane};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrError {
    #[error("dimension mismatch: {a_w}x{a_h} vs {b_w}x{b_h}")]
    DimensionMismatch {
        a_w: usize,
        a_h: usize,
        b_w: usize,
        b_h: usize,
    },
    #[error("image {width}x{height} is smaller than the required {min}x{min}")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
}

pub type Result<T> = std::result::Result<T, FrError>;

/// Returned by [`psnr`] for identical inputs.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Smallest side that survives four dyadic reductions with an 11×11 window.
pub const MS_SSIM_MIN_SIZE: usize = SSIM_WINDOW << 4;

const PEAK: f64 = 255.0;

fn same_dims(a: &Plane, b: &Plane) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(FrError::DimensionMismatch {
            a_w: a.width(),
            a_h: a.height(),
            b_w: b.width(),
            b_h: b.height(),
        });
    }
    Ok(())
}

fn min_size(p: &Plane, min: usize) -> Result<()> {
    if p.width() < min || p.height() < min {
        return Err(FrError::TooSmall {
            width: p.width(),
            height: p.height(),
            min,
        });
    }
    Ok(())
}

pub fn psnr(reference: &Plane, test: &Plane) -> Result<f64> {
    same_dims(reference, test)?;
    let n = reference.data().len() as f64;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP))
}

/// Separable filtering keeping only positions where the window fits ("valid").
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (j, &kv) in k.iter().enumerate() {
            let src = &tmp[(y + j) * ow..(y + j + 1) * ow];
            for (d, s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    (out, ow, oh)
}

/// Mean luminance term times mean contrast-structure term, and the latter alone.
struct SsimParts {
    ssim: f64,
    cs: f64,
}

fn ssim_parts(a: &Plane, b: &Plane) -> SsimParts {
    let k = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let (w, h) = (a.width(), a.height());
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect()
    };
    let (mu_x, ow, oh) = filter_valid(x, w, h, &k);
    let (mu_y, ..) = filter_valid(y, w, h, &k);
    let (xx, ..) = filter_valid(&prod(&|p, _| p * p), w, h, &k);
    let (yy, ..) = filter_valid(&prod(&|_, q| q * q), w, h, &k);
    let (xy, ..) = filter_valid(&prod(&|p, q| p * q), w, h, &k);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let (mut s_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..ow * oh {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = xx[i] - mx * mx;
        let vy = yy[i] - my * my;
        let cov = xy[i] - mx * my;
        let cs = (2.0 * cov + c2) / (vx + vy + c2);
        let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        s_sum += l * cs;
        cs_sum += cs;
    }
    let n = (ow * oh) as f64;
    SsimParts {
        ssim: s_sum / n,
        cs: cs_sum / n,
    }
}

/// Single-scale SSIM, Gaussian 11×11 window, mean over the valid map.
pub fn ssim(reference: &Plane, test: &Plane) -> Result<f64> {
    same_dims(reference, test)?;
    min_size(reference, SSIM_WINDOW)?;
    Ok(ssim_parts(reference, test).ssim)
}

/// 2×2 box average followed by subsampling; odd trailing rows/columns drop.
fn halve(p: &Plane) -> Plane {
    let (w, h) = (p.width() / 2, p.height() / 2);
    Plane::from_fn(w, h, |x, y| {
        0.25 * (p.get(2 * x, 2 * y)
            + p.get(2 * x + 1, 2 * y)
            + p.get(2 * x, 2 * y + 1)
            + p.get(2 * x + 1, 2 * y + 1))
    })
    .expect("nonzero size")
}

/// Per-scale values entering MS-SSIM: contrast-structure at the first four
/// scales and full SSIM at the coarsest, each clamped to be non-negative.
pub fn ms_ssim_components(reference: &Plane, test: &Plane) -> Result<[f64; 5]> {
    same_dims(reference, test)?;
    min_size(reference, MS_SSIM_MIN_SIZE)?;
    let mut out = [0.0; 5];
    let (mut a, mut b) = (reference.clone(), test.clone());
    for (s, slot) in out.iter_mut().enumerate() {
        let parts = ssim_parts(&a, &b);
        *slot = if s == 4 { parts.ssim } else { parts.cs }.max(0.0);
        if s < 4 {
            a = halve(&a);
            b = halve(&b);
        }
    }
    Ok(out)
}

pub fn ms_ssim(reference: &Plane, test: &Plane) -> Result<f64> {
    let c = ms_ssim_components(reference, test)?;
    Ok(c.iter().zip(MS_SSIM_WEIGHTS).map(|(v, w)| v.powf(w)).product())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrMetric {
    Psnr,
    Ssim,
    MsSsim,
}

impl FrMetric {
    pub const ALL: [FrMetric; 3] = [FrMetric::Psnr, FrMetric::Ssim, FrMetric::MsSsim];

    pub fn as_str(self) -> &'static str {
        match self {
            FrMetric::Psnr => "psnr",
            FrMetric::Ssim => "ssim",
            FrMetric::MsSsim => "ms_ssim",
        }
    }

    pub fn compute(self, reference: &Plane, test: &Plane) -> Result<f64> {
        match self {
            FrMetric::Psnr => psnr(reference, test),
            FrMetric::Ssim => ssim(reference, test),
            FrMetric::MsSsim => ms_ssim(reference, test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrScore {
    pub stimulus_id: String,
    pub metric: FrMetric,
    pub value: f64,
}

impl From<&FrScore> for ScoreRecord {
    fn from(s: &FrScore) -> Self {
        ScoreRecord {
            stimulus_id: s.stimulus_id.clone(),
            model: s.metric.as_str().to_string(),
            score: s.value,
        }
    }
}

/// All three metrics of `test` against `reference`. When the up-scaled image
/// differs in size by rounding, both are cropped to their common top-left
/// region. Metrics whose preconditions fail are reported in the error list.
pub fn fr_scores(
    stimulus_id: &str,
    reference: &ImageBuffer,
    test: &ImageBuffer,
) -> (Vec<FrScore>, Vec<(FrMetric, FrError)>) {
    let (w, h) = (
        reference.width().min(test.width()),
        reference.height().min(test.height()),
    );
    let crop = |img: &ImageBuffer| {
        to_luma(img)
            .crop(0, 0, w, h)
            .expect("common region lies inside both images")
    };
    let (r, t) = (crop(reference), crop(test));
    let mut scores = Vec::new();
    let mut errors = Vec::new();
    for metric in FrMetric::ALL {
        match metric.compute(&r, &t) {
            Ok(value) => scores.push(FrScore {
                stimulus_id: stimulus_id.to_string(),
                metric,
                value,
            }),
            Err(e) => errors.push((metric, e)),
        }
    }
    (scores, errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::gaussian_blur;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::from_fn(w, h, |_, _| rng.random_range(0..=255) as f64).unwrap()
    }

    fn smooth_scene(w: usize, h: usize, seed: u64) -> Plane {
        gaussian_blur(&random_plane(w, h, seed), 1.0).map(|v| v.round())
    }

    /// Brute-force SSIM: explicit 11×11 window sums at every valid position.
    fn ssim_oracle(a: &Plane, b: &Plane) -> f64 {
        let g = gaussian_kernel(1.5, 5);
        let c1 = (0.01f64 * 255.0).powi(2);
        let c2 = (0.03f64 * 255.0).powi(2);
        let (ow, oh) = (a.width() - 10, a.height() - 10);
        let mut total = 0.0;
        for y0 in 0..oh {
            for x0 in 0..ow {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let wgt = g[i] * g[j];
                        let (p, q) = (a.get(x0 + i, y0 + j), b.get(x0 + i, y0 + j));
                        mx += wgt * p;
                        my += wgt * q;
                        sxx += wgt * p * p;
                        syy += wgt * q * q;
                        sxy += wgt * p * q;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total / (ow * oh) as f64
    }

    #[test]
    fn psnr_examples() {
        let a = random_plane(20, 10, 1);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = Plane::filled(8, 8, 100.0).unwrap();
        let c = Plane::filled(8, 8, 116.0).unwrap();
        assert_relative_eq!(psnr(&b, &c).unwrap(), 24.05, epsilon = 5e-3);
        assert_relative_eq!(psnr(&b, &c).unwrap(), 10.0 * (65025.0f64 / 256.0).log10());
        let d = random_plane(20, 10, 2);
        let mse = a
            .data()
            .iter()
            .zip(d.data())
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            / 200.0;
        assert_relative_eq!(
            psnr(&a, &d).unwrap(),
            20.0 * 255.0f64.log10() - 10.0 * mse.log10(),
            max_relative = 1e-9
        );
        assert!(matches!(
            psnr(&a, &Plane::filled(10, 20, 0.0).unwrap()),
            Err(FrError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ssim_examples() {
        let a = smooth_scene(40, 30, 3);
        assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let flat = Plane::filled(16, 16, 128.0).unwrap();
        assert_relative_eq!(ssim(&flat, &flat).unwrap(), 1.0, epsilon = 1e-12);
        let light = gaussian_blur(&a, 0.8);
        let heavy = gaussian_blur(&a, 3.0);
        assert!(ssim(&a, &heavy).unwrap() < ssim(&a, &light).unwrap());
        assert!(matches!(ssim(&flat.crop(0, 0, 10, 16).unwrap(), &flat.crop(0, 0, 10, 16).unwrap()), Err(FrError::TooSmall { .. })));
    }

    #[test]
    fn ssim_matches_window_oracle() {
        let a = random_plane(23, 17, 5);
        let b = gaussian_blur(&a, 1.2);
        assert_relative_eq!(ssim(&a, &b).unwrap(), ssim_oracle(&a, &b), max_relative = 1e-9);
    }

    #[test]
    fn ms_ssim_examples() {
        let a = smooth_scene(180, 176, 7);
        assert_relative_eq!(ms_ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let flat = Plane::filled(176, 176, 90.0).unwrap();
        assert_relative_eq!(ms_ssim(&flat, &flat).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(
            ms_ssim(&a.crop(0, 0, 175, 176).unwrap(), &a.crop(0, 0, 175, 176).unwrap()),
            Err(FrError::TooSmall { .. })
        ));
    }

    #[test]
    fn ms_ssim_lies_within_component_bounds() {
        let sum_w: f64 = MS_SSIM_WEIGHTS.iter().sum();
        for seed in 0..3 {
            let a = smooth_scene(192, 176, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let blurred = gaussian_blur(&a, 1.5);
            let data = blurred.data().iter().map(|v| v + rng.random_range(-20.0..20.0)).collect();
            let b = Plane::new(a.width(), a.height(), data).unwrap();
            let c = ms_ssim_components(&a, &b).unwrap();
            let v = ms_ssim(&a, &b).unwrap();
            let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(v >= lo.powf(sum_w) - 1e-12 && v <= hi.powf(sum_w) + 1e-12, "{v} {c:?}");
            assert!(v < 1.0);
        }
    }

    #[test]
    fn fr_scores_use_common_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = ImageBuffer::from_fn_rgb(24, 20, |_, _| rng.random()).unwrap();
        let t = r.crop(0, 0, 23, 20).unwrap();
        let (scores, errors) = fr_scores("s", &r, &t);
        assert_eq!(scores.len(), 2);
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].0, FrMetric::MsSsim);
        assert_eq!(scores[0].value, 100.0);
        assert_relative_eq!(scores[1].value, 1.0, epsilon = 1e-12);
        let rec = ScoreRecord::from(&scores[0]);
        assert_eq!(rec.model, "psnr");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn metrics_are_symmetric(seed in 0u64..1000, w in 11usize..30, h in 11usize..30) {
            let a = random_plane(w, h, seed);
            let b = random_plane(w, h, seed + 1);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
