//! Pixel substrate: 8-bit raster and float luma planes, PNG/JPEG I/O,
//! Lanczos-3 resampling, non-overlapping patch grids and center crops.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{ColorType, ImageError, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lanczos window half-width.
pub const LANCZOS_LOBES: f64 = 3.0;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("cannot encode {path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("invalid dimension {width}x{height}")]
    InvalidDimension { width: usize, height: usize },
    #[error("crop {crop_w}x{crop_h} does not fit into {width}x{height}")]
    CropTooLarge {
        crop_w: usize,
        crop_h: usize,
        width: usize,
        height: usize,
    },
    #[error("buffer of {len} samples does not match {width}x{height}x{channels}")]
    BadBufferLength {
        len: usize,
        width: usize,
        height: usize,
        channels: usize,
    },
}

pub type Result<T> = std::result::Result<T, ImagingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelFormat {
    Rgb8,
    Gray8,
}

impl PixelFormat {
    pub fn channels(self) -> usize {
        match self {
            PixelFormat::Rgb8 => 3,
            PixelFormat::Gray8 => 1,
        }
    }
}

/// Row-major, channel-interleaved 8-bit raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    format: PixelFormat,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, format: PixelFormat, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidDimension { width, height });
        }
        if data.len() != width * height * format.channels() {
            return Err(ImagingError::BadBufferLength {
                len: data.len(),
                width,
                height,
                channels: format.channels(),
            });
        }
        Ok(Self {
            width,
            height,
            format,
            data,
        })
    }

    /// Solid RGB image.
    pub fn filled_rgb(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, PixelFormat::Rgb8, data)
    }

    /// Build an RGB image by evaluating `f(x, y)` per pixel.
    pub fn from_fn_rgb(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, PixelFormat::Rgb8, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn format(&self) -> PixelFormat {
        self.format
    }

    pub fn channels(&self) -> usize {
        self.format.channels()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let c = self.channels();
        let i = (y * self.width + x) * c;
        &self.data[i..i + c]
    }

    /// Iterate RGB triples; gray images repeat the single channel.
    pub fn rgb_pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        let c = self.channels();
        self.data.chunks_exact(c).map(move |p| {
            if c == 3 {
                [p[0], p[1], p[2]]
            } else {
                [p[0], p[0], p[0]]
            }
        })
    }

    /// Copy out the rectangle at (`x`, `y`) of size `w`×`h`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(ImagingError::InvalidDimension {
                width: w,
                height: h,
            });
        }
        if x + w > self.width || y + h > self.height {
            return Err(ImagingError::CropTooLarge {
                crop_w: w,
                crop_h: h,
                width: self.width,
                height: self.height,
            });
        }
        let c = self.channels();
        let mut data = Vec::with_capacity(w * h * c);
        for row in y..y + h {
            let start = (row * self.width + x) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Self::new(w, h, self.format, data)
    }

    /// Rotate by 180 degrees.
    pub fn rotated_180(&self) -> Self {
        let c = self.channels();
        let mut data = Vec::with_capacity(self.data.len());
        for p in self.data.chunks_exact(c).rev() {
            data.extend_from_slice(p);
        }
        Self { data, ..self.clone() }
    }
}

/// Single-channel float raster (luma in [0,255], not rounded).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidDimension { width, height });
        }
        if data.len() != width * height {
            return Err(ImagingError::BadBufferLength {
                len: data.len(),
                width,
                height,
                channels: 1,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(ImagingError::InvalidDimension {
                width: w,
                height: h,
            });
        }
        if x + w > self.width || y + h > self.height {
            return Err(ImagingError::CropTooLarge {
                crop_w: w,
                crop_h: h,
                width: self.width,
                height: self.height,
            });
        }
        let mut data = Vec::with_capacity(w * h);
        for row in y..y + h {
            data.extend_from_slice(&self.row(row)[x..x + w]);
        }
        Self::new(w, h, data)
    }

    pub fn rotated_180(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().rev().copied().collect(),
        }
    }

    pub fn transposed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for x in 0..self.width {
            for y in 0..self.height {
                data.push(self.get(x, y));
            }
        }
        Self {
            width: self.height,
            height: self.width,
            data,
        }
    }
}

fn classify_image_error(path: &Path, err: ImageError) -> ImagingError {
    match err {
        ImageError::IoError(source) => match source.kind() {
            std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::InvalidData => {
                ImagingError::Format {
                    path: path.to_path_buf(),
                    message: source.to_string(),
                }
            }
            _ => ImagingError::Io {
                path: path.to_path_buf(),
                source,
            },
        },
        other => ImagingError::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Decode a PNG or JPEG file into an RGB8 buffer.
pub fn decode(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ImagingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_bytes(&bytes).map_err(|e| match e {
        ImagingError::Format { message, .. } => ImagingError::Format {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Decode in-memory PNG or JPEG data.
pub fn decode_bytes(bytes: &[u8]) -> Result<ImageBuffer> {
    let unknown = Path::new("<memory>");
    let format = image::guess_format(bytes).map_err(|e| classify_image_error(unknown, e))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(ImagingError::Format {
            path: unknown.to_path_buf(),
            message: format!("unsupported format {format:?}"),
        });
    }
    let img = ImageReader::with_format(std::io::Cursor::new(bytes), format)
        .decode()
        .map_err(|e| classify_image_error(unknown, e))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    ImageBuffer::new(w as usize, h as usize, PixelFormat::Rgb8, img.into_raw())
}

/// Read only the header dimensions of an image file.
pub fn dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|source| ImagingError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| ImagingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| classify_image_error(path, e))?;
    Ok((w as usize, h as usize))
}

/// Encode as PNG (the only lossless intermediate format used).
pub fn encode_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = match img.format {
        PixelFormat::Rgb8 => ColorType::Rgb8,
        PixelFormat::Gray8 => ColorType::L8,
    };
    image::save_buffer_with_format(
        path,
        &img.data,
        img.width as u32,
        img.height as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| ImagingError::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Rec.601 luma, unrounded.
pub fn to_luma(img: &ImageBuffer) -> Plane {
    let data = img
        .rgb_pixels()
        .map(|[r, g, b]| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .collect();
    Plane {
        width: img.width,
        height: img.height,
        data,
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.fract() == 0.0 {
        // exact zero crossings keep identity resampling exact
        0.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Lanczos-3 kernel `sinc(x)·sinc(x/3)` on |x| < 3.
pub fn lanczos3(x: f64) -> f64 {
    if x.abs() >= LANCZOS_LOBES {
        0.0
    } else {
        sinc(x) * sinc(x / LANCZOS_LOBES)
    }
}

/// Normalized taps of one output sample: (clamped source index, weight).
#[derive(Debug, Clone)]
pub struct Taps {
    pub taps: Vec<(usize, f64)>,
}

/// Per-output-sample weights for resampling an axis of `in_len` onto `out_len`.
pub fn axis_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    let filter_scale = scale.max(1.0);
    let support = LANCZOS_LOBES * filter_scale;
    let last = in_len as i64 - 1;
    (0..out_len)
        .map(|d| {
            let center = (d as f64 + 0.5) * scale - 0.5;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
            for i in lo..=hi {
                let w = lanczos3((i as f64 - center) / filter_scale);
                if w != 0.0 {
                    let idx = i.clamp(0, last) as usize;
                    match taps.last_mut() {
                        Some(t) if t.0 == idx => t.1 += w,
                        _ => taps.push((idx, w)),
                    }
                }
            }
            let sum: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= sum;
            }
            Taps { taps }
        })
        .collect()
}

/// Separable resampling of interleaved f64 samples (horizontal pass first).
fn resample(
    src: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let horizontal = if out_w == width {
        src.to_vec()
    } else {
        let taps = axis_taps(width, out_w);
        let mut out = vec![0.0; out_w * height * channels];
        for y in 0..height {
            let row = &src[y * width * channels..(y + 1) * width * channels];
            let dst = &mut out[y * out_w * channels..(y + 1) * out_w * channels];
            for (x, t) in taps.iter().enumerate() {
                for c in 0..channels {
                    dst[x * channels + c] = t
                        .taps
                        .iter()
                        .map(|&(i, w)| row[i * channels + c] * w)
                        .sum();
                }
            }
        }
        out
    };
    if out_h == height {
        return horizontal;
    }
    let taps = axis_taps(height, out_h);
    let stride = out_w * channels;
    let mut out = vec![0.0; stride * out_h];
    for (y, t) in taps.iter().enumerate() {
        let dst = &mut out[y * stride..(y + 1) * stride];
        for &(i, w) in &t.taps {
            let src_row = &horizontal[i * stride..(i + 1) * stride];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += s * w;
            }
        }
    }
    out
}

/// Round-half-away-from-zero after clamping to the 8-bit range.
#[inline]
pub fn quantize(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

/// Lanczos-3 resize of an 8-bit image.
pub fn resize_lanczos(img: &ImageBuffer, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    if out_w == 0 || out_h == 0 {
        return Err(ImagingError::InvalidDimension {
            width: out_w,
            height: out_h,
        });
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let src: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let out = resample(&src, img.width, img.height, img.channels(), out_w, out_h);
    ImageBuffer::new(
        out_w,
        out_h,
        img.format,
        out.into_iter().map(quantize).collect(),
    )
}

/// Lanczos-3 resize of a float plane; no clamping or rounding.
pub fn resize_plane_lanczos(plane: &Plane, out_w: usize, out_h: usize) -> Result<Plane> {
    if out_w == 0 || out_h == 0 {
        return Err(ImagingError::InvalidDimension {
            width: out_w,
            height: out_h,
        });
    }
    if out_w == plane.width && out_h == plane.height {
        return Ok(plane.clone());
    }
    let out = resample(&plane.data, plane.width, plane.height, 1, out_w, out_h);
    Plane::new(out_w, out_h, out)
}

/// Width after proportional rescaling to `target_h`.
pub fn scaled_width(width: usize, height: usize, target_h: usize) -> usize {
    ((width as f64 * target_h as f64 / height as f64).round() as usize).max(1)
}

/// Rescale preserving aspect ratio so that the height equals `target_h`.
pub fn rescale_to_height(img: &ImageBuffer, target_h: usize) -> Result<ImageBuffer> {
    if target_h == 0 {
        return Err(ImagingError::InvalidDimension {
            width: img.width,
            height: target_h,
        });
    }
    let w = scaled_width(img.width, img.height, target_h);
    resize_lanczos(img, w, target_h)
}

/// Non-overlapping square patches anchored at the top-left corner.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub cols: usize,
    pub rows: usize,
    /// Row-major.
    pub patches: Vec<ImageBuffer>,
    /// Set when the image is smaller than one patch in either direction.
    pub empty: bool,
}

/// Number of patches `extract_patches` yields for a `width`×`height` image.
pub fn patch_count(width: usize, height: usize, patch_size: usize) -> usize {
    if patch_size == 0 {
        return 0;
    }
    (width / patch_size) * (height / patch_size)
}

pub fn extract_patches(img: &ImageBuffer, patch_size: usize) -> Result<PatchGrid> {
    if patch_size == 0 {
        return Err(ImagingError::InvalidDimension {
            width: 0,
            height: 0,
        });
    }
    let cols = img.width / patch_size;
    let rows = img.height / patch_size;
    let mut patches = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            patches.push(img.crop(c * patch_size, r * patch_size, patch_size, patch_size)?);
        }
    }
    Ok(PatchGrid {
        patch_size,
        cols,
        rows,
        empty: patches.is_empty(),
        patches,
    })
}

/// Origin of a centered `w`×`h` window.
pub fn center_origin(width: usize, height: usize, w: usize, h: usize) -> Result<(usize, usize)> {
    if w > width || h > height {
        return Err(ImagingError::CropTooLarge {
            crop_w: w,
            crop_h: h,
            width,
            height,
        });
    }
    Ok(((width - w) / 2, (height - h) / 2))
}

pub fn center_crop(img: &ImageBuffer, w: usize, h: usize) -> Result<ImageBuffer> {
    let (x, y) = center_origin(img.width, img.height, w, h)?;
    img.crop(x, y, w, h)
}
