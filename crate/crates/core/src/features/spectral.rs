//! High-frequency share of the luma spectrum.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureError, Result};
use crate::imaging::Plane;

pub const FFT_MIN_SIZE: usize = 32;
/// Normalized radius above which a frequency counts as high band.
pub const HIGH_BAND_RADIUS: f64 = 0.5;

/// Magnitudes of the 2-D DFT of the mean-removed plane, unshifted.
pub fn magnitude_spectrum(luma: &Plane) -> Vec<f64> {
    let (w, h) = (luma.width(), luma.height());
    let mean = luma.data().iter().sum::<f64>() / (w * h) as f64;
    let mut buf: Vec<Complex<f64>> = luma
        .data()
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    buf.into_iter().map(|c| c.norm()).collect()
}

/// Signed frequency index of DFT bin `k` of length `n` (the fftshift'ed coordinate).
fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Mean of `log(1+|F|)` over the high band divided by the mean over the
/// full spectrum. 0 for a flat image.
pub fn fft_feature(luma: &Plane) -> Result<f64> {
    let (w, h) = (luma.width(), luma.height());
    if w < FFT_MIN_SIZE || h < FFT_MIN_SIZE {
        return Err(FeatureError::TooSmall {
            width: w,
            height: h,
            min: FFT_MIN_SIZE,
        });
    }
    let mags = magnitude_spectrum(luma);
    let (half_w, half_h) = (w as f64 / 2.0, h as f64 / 2.0);
    let (mut all, mut high, mut n_high) = (0.0, 0.0, 0usize);
    for y in 0..h {
        let fy = signed_freq(y, h) / half_h;
        for x in 0..w {
            let fx = signed_freq(x, w) / half_w;
            let v = mags[y * w + x].ln_1p();
            all += v;
            if (fx * fx + fy * fy).sqrt() > HIGH_BAND_RADIUS {
                high += v;
                n_high += 1;
            }
        }
    }
    let mean_all = all / (w * h) as f64;
    // numerically flat spectra come from constant images
    if mean_all < 1e-9 || n_high == 0 {
        return Ok(0.0);
    }
    Ok((high / n_high as f64) / mean_all)
}
