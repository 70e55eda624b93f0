//! Edge-width profiling shared by CPBD and the blur-strength feature.
//!
//! Edges are pixels whose horizontal Sobel response dominates the vertical
//! one, exceeds [`EDGE_STEP_THRESHOLD`] and is a local maximum along the
//! row. The width of an edge is the distance between the intensity extrema
//! bracketing it along the row.

use serde::{Deserialize, Serialize};

use super::{FeatureError, Result};
use crate::filters::sobel_at;
use crate::imaging::Plane;

/// Minimum equivalent step height (luma levels, `|gx| / 4`) of an edge pixel.
pub const EDGE_STEP_THRESHOLD: f64 = 16.0;
pub const CPBD_BLOCK: usize = 64;
/// A block is an edge block when more than this fraction of its pixels are edges.
pub const CPBD_EDGE_BLOCK_FRACTION: f64 = 0.002;
pub const CPBD_BETA: f64 = 3.6;
pub const CPBD_CONTRAST_SPLIT: f64 = 50.0;
pub const CPBD_JNB_LOW_CONTRAST: f64 = 5.0;
pub const CPBD_JNB_HIGH_CONTRAST: f64 = 3.0;
pub const CPBD_DETECTION_THRESHOLD: f64 = 0.63;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePixel {
    pub x: usize,
    pub y: usize,
    pub width: f64,
}

/// Detect horizontal-gradient edges and measure their widths.
pub fn edge_widths(luma: &Plane) -> Vec<EdgePixel> {
    let (w, h) = (luma.width(), luma.height());
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let mut edges = Vec::new();
    let mut gx_row = vec![0.0; w];
    let mut strong = vec![false; w];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let (gx, gy) = sobel_at(luma, x, y);
            gx_row[x] = gx;
            strong[x] = gx.abs() >= gy.abs() && gx.abs() / 4.0 >= EDGE_STEP_THRESHOLD;
        }
        let row = luma.row(y);
        for x in 1..w - 1 {
            if !strong[x] {
                continue;
            }
            let g = gx_row[x].abs();
            let left = if x > 1 { gx_row[x - 1].abs() } else { 0.0 };
            let right = if x + 1 < w - 1 { gx_row[x + 1].abs() } else { 0.0 };
            if !(g > left && g >= right) {
                continue;
            }
            let dir = gx_row[x].signum();
            let mut lo = x;
            while lo > 0 && dir * (row[lo] - row[lo - 1]) > 0.0 {
                lo -= 1;
            }
            let mut hi = x;
            while hi + 1 < w && dir * (row[hi + 1] - row[hi]) > 0.0 {
                hi += 1;
            }
            if hi > lo {
                edges.push(EdgePixel {
                    x,
                    y,
                    width: (hi - lo) as f64,
                });
            }
        }
    }
    edges
}

/// Probability of detecting blur for an edge of `width` in a block of `contrast`.
pub fn blur_detection_probability(width: f64, contrast: f64) -> f64 {
    let jnb = if contrast <= CPBD_CONTRAST_SPLIT {
        CPBD_JNB_LOW_CONTRAST
    } else {
        CPBD_JNB_HIGH_CONTRAST
    };
    1.0 - (-(width / jnb).powf(CPBD_BETA)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpbdReport {
    pub value: f64,
    pub edge_blocks: usize,
    pub edges_used: usize,
    /// No edge block was found; `value` is 0 by convention.
    pub no_edges: bool,
}

pub fn cpbd_report(luma: &Plane) -> Result<CpbdReport> {
    let (w, h) = (luma.width(), luma.height());
    if w < CPBD_BLOCK || h < CPBD_BLOCK {
        return Err(FeatureError::TooSmall {
            width: w,
            height: h,
            min: CPBD_BLOCK,
        });
    }
    let (bx, by) = (w / CPBD_BLOCK, h / CPBD_BLOCK);
    let mut per_block: Vec<Vec<f64>> = vec![Vec::new(); bx * by];
    for e in edge_widths(luma) {
        let (cx, cy) = (e.x / CPBD_BLOCK, e.y / CPBD_BLOCK);
        if cx < bx && cy < by {
            per_block[cy * bx + cx].push(e.width);
        }
    }
    let min_edges = CPBD_EDGE_BLOCK_FRACTION * (CPBD_BLOCK * CPBD_BLOCK) as f64;
    let (mut total, mut sharp, mut blocks) = (0usize, 0usize, 0usize);
    for (i, widths) in per_block.iter().enumerate() {
        if (widths.len() as f64) <= min_edges {
            continue;
        }
        blocks += 1;
        let (x0, y0) = ((i % bx) * CPBD_BLOCK, (i / bx) * CPBD_BLOCK);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for y in y0..y0 + CPBD_BLOCK {
            for &v in &luma.row(y)[x0..x0 + CPBD_BLOCK] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let contrast = hi - lo;
        for &width in widths {
            total += 1;
            if blur_detection_probability(width, contrast) <= CPBD_DETECTION_THRESHOLD {
                sharp += 1;
            }
        }
    }
    Ok(CpbdReport {
        value: if total == 0 { 0.0 } else { sharp as f64 / total as f64 },
        edge_blocks: blocks,
        edges_used: total,
        no_edges: total == 0,
    })
}

/// Cumulative probability of blur detection, in [0,1]; higher is sharper.
pub fn cpbd(luma: &Plane) -> Result<f64> {
    cpbd_report(luma).map(|r| r.value)
}

/// Mean edge width in pixels over all detected edges; 0 without edges.
pub fn blur_strength(luma: &Plane) -> Result<f64> {
    if luma.width() < 3 || luma.height() < 3 {
        return Err(FeatureError::TooSmall {
            width: luma.width(),
            height: luma.height(),
            min: 3,
        });
    }
    let edges = edge_widths(luma);
    if edges.is_empty() {
        return Ok(0.0);
    }
    Ok(edges.iter().map(|e| e.width).sum::<f64>() / edges.len() as f64)
}
