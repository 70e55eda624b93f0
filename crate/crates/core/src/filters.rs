//! Small convolution toolkit on float planes. Borders replicate the edge pixel.

use crate::imaging::Plane;

/// Normalized 1-D Gaussian taps on `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Gaussian taps with the customary `ceil(3σ)` radius.
pub fn gaussian_kernel_3sigma(sigma: f64) -> Vec<f64> {
    gaussian_kernel(sigma, (3.0 * sigma).ceil() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Convolve along one axis with an odd-length kernel centered on its middle tap.
pub fn convolve_axis(plane: &Plane, kernel: &[f64], axis: Axis) -> Plane {
    debug_assert!(kernel.len() % 2 == 1);
    let (w, h) = (plane.width(), plane.height());
    let r = (kernel.len() / 2) as i64;
    let src = plane.data();
    let mut out = vec![0.0; w * h];
    match axis {
        Axis::Horizontal => {
            for y in 0..h {
                let row = &src[y * w..(y + 1) * w];
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, &kv) in kernel.iter().enumerate() {
                        let sx = (x as i64 + k as i64 - r).clamp(0, w as i64 - 1) as usize;
                        acc += kv * row[sx];
                    }
                    out[y * w + x] = acc;
                }
            }
        }
        Axis::Vertical => {
            for (k, &kv) in kernel.iter().enumerate() {
                for y in 0..h {
                    let sy = (y as i64 + k as i64 - r).clamp(0, h as i64 - 1) as usize;
                    let src_row = &src[sy * w..(sy + 1) * w];
                    let dst = &mut out[y * w..(y + 1) * w];
                    for (d, s) in dst.iter_mut().zip(src_row) {
                        *d += kv * s;
                    }
                }
            }
        }
    }
    Plane::new(w, h, out).expect("same dimensions")
}

pub fn convolve_separable(plane: &Plane, kernel: &[f64]) -> Plane {
    convolve_axis(&convolve_axis(plane, kernel, Axis::Horizontal), kernel, Axis::Vertical)
}

pub fn gaussian_blur(plane: &Plane, sigma: f64) -> Plane {
    convolve_separable(plane, &gaussian_kernel_3sigma(sigma))
}

/// Sobel responses `(gx, gy)` at an interior pixel; `gx` is positive when
/// intensity increases to the right.
#[inline]
pub fn sobel_at(plane: &Plane, x: usize, y: usize) -> (f64, f64) {
    let p = |dx: i64, dy: i64| plane.get((x as i64 + dx) as usize, (y as i64 + dy) as usize);
    let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
    let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
    (gx, gy)
}

/// Median of a slice (average of the middle pair for even lengths).
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
