//! Minimal SVG charts: box plots, scatter plots, grouped bars and confusion
//! matrices. Output is a pure function of the input, so reruns are
//! byte-identical.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 90.0;

const PALETTE: [&str; 8] = [
    "#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb", "#000000",
];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Fixed two-decimal coordinates keep the output stable.
fn n(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

struct Doc {
    w: f64,
    h: f64,
    body: String,
}

impl Doc {
    fn new(w: f64, h: f64, title: &str) -> Self {
        let mut d = Doc {
            w,
            h,
            body: String::new(),
        };
        d.text(w / 2.0, 24.0, "middle", 16.0, title);
        d
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{}"/>"#,
            n(x1),
            n(y1),
            n(x2),
            n(y2),
            n(width)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" stroke="{stroke}"/>"#,
            n(x),
            n(y),
            n(w.max(0.0)),
            n(h.max(0.0))
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{}" cy="{}" r="{}" fill="{fill}" fill-opacity="0.7"/>"#,
            n(x),
            n(y),
            n(r)
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: f64, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" font-size="{}">{}</text>"#,
            n(x),
            n(y),
            n(size),
            escape(s)
        );
    }

    fn rotated_text(&mut self, x: f64, y: f64, angle: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="11" transform="rotate({} {x} {y})">{}</text>"#,
            n(angle),
            escape(s),
            x = n(x),
            y = n(y),
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = n(self.w),
            h = n(self.h),
        )
    }
}

/// Linear map from data to pixels.
#[derive(Debug, Clone, Copy)]
struct Scale {
    d0: f64,
    d1: f64,
    r0: f64,
    r1: f64,
}

impl Scale {
    fn new(mut d0: f64, mut d1: f64, r0: f64, r1: f64) -> Self {
        if !(d0.is_finite() && d1.is_finite()) {
            d0 = 0.0;
            d1 = 1.0;
        }
        if d1 - d0 <= f64::EPSILON * d0.abs().max(1.0) {
            d0 -= 0.5;
            d1 += 0.5;
        }
        Scale { d0, d1, r0, r1 }
    }

    fn map(&self, v: f64) -> f64 {
        self.r0 + (v - self.d0) / (self.d1 - self.d0) * (self.r1 - self.r0)
    }
}

/// Round tick positions covering `[lo, hi]` with steps of 1, 2 or 5 × 10^k.
pub fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let pad = if hi > lo { (hi - lo) * 0.05 } else { 0.5 };
    (lo - pad, hi + pad)
}

fn y_axis(d: &mut Doc, y: &Scale, label: &str) {
    let (x0, x1) = (LEFT, d.w - RIGHT);
    d.line(x0, TOP, x0, d.h - BOTTOM, "#000", 1.0);
    for t in ticks(y.d0, y.d1, 6) {
        let py = y.map(t);
        d.line(x0 - 4.0, py, x0, py, "#000", 1.0);
        d.line(x0, py, x1, py, "#e5e5e5", 1.0);
        d.text(x0 - 6.0, py + 4.0, "end", 11.0, &tick_label(t));
    }
    d.rotated_text(16.0, (TOP + d.h - BOTTOM) / 2.0, -90.0, "middle", label);
}

/// Quartile summary with linearly interpolated quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Most extreme values within 1.5 IQR of the box.
    pub low_whisker: f64,
    pub high_whisker: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    Some(BoxStats {
        q1,
        median,
        q3,
        low_whisker: *v.iter().find(|&&x| x >= lo_fence).unwrap_or(&q1),
        high_whisker: *v.iter().rev().find(|&&x| x <= hi_fence).unwrap_or(&q3),
    })
}

/// One box per group, in the given order. Empty groups leave a gap.
pub fn boxplot(title: &str, y_label: &str, groups: &[(String, Vec<f64>)], y_range: Option<(f64, f64)>) -> String {
    let mut d = Doc::new(WIDTH, HEIGHT, title);
    let (lo, hi) = y_range.unwrap_or_else(|| {
        let (lo, hi) = extent(groups.iter().flat_map(|g| g.1.iter().copied()));
        padded(lo, hi)
    });
    let y = Scale::new(lo, hi, HEIGHT - BOTTOM, TOP);
    y_axis(&mut d, &y, y_label);
    let slot = (WIDTH - LEFT - RIGHT) / groups.len().max(1) as f64;
    let half = (slot * 0.3).min(30.0);
    for (i, (label, values)) in groups.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        d.rotated_text(cx, HEIGHT - BOTTOM + 14.0, -30.0, "end", &format!("{label} (n={})", values.len()));
        let Some(s) = box_stats(values) else { continue };
        let color = PALETTE[i % PALETTE.len()];
        d.line(cx, y.map(s.low_whisker), cx, y.map(s.q1), "#000", 1.0);
        d.line(cx, y.map(s.q3), cx, y.map(s.high_whisker), "#000", 1.0);
        for w in [s.low_whisker, s.high_whisker] {
            d.line(cx - half / 2.0, y.map(w), cx + half / 2.0, y.map(w), "#000", 1.0);
        }
        d.rect(cx - half, y.map(s.q3), 2.0 * half, y.map(s.q1) - y.map(s.q3), color, "#000");
        d.line(cx - half, y.map(s.median), cx + half, y.map(s.median), "#000", 2.0);
        for &v in values.iter().filter(|v| v.is_finite()) {
            if v < s.low_whisker || v > s.high_whisker {
                d.circle(cx, y.map(v), 2.5, "#000");
            }
        }
    }
    d.finish()
}

/// Points mapped directly to pixels; `diagonal` adds the y = x line.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)], diagonal: bool) -> String {
    let mut d = Doc::new(WIDTH, HEIGHT, title);
    let (xl, xh) = extent(points.iter().map(|p| p.0));
    let (yl, yh) = extent(points.iter().map(|p| p.1));
    let (xl, xh, yl, yh) = if diagonal {
        let (l, h) = padded(xl.min(yl), xh.max(yh));
        (l, h, l, h)
    } else {
        let (xl, xh) = padded(xl, xh);
        let (yl, yh) = padded(yl, yh);
        (xl, xh, yl, yh)
    };
    let x = Scale::new(xl, xh, LEFT, WIDTH - RIGHT);
    let y = Scale::new(yl, yh, HEIGHT - BOTTOM, TOP);
    y_axis(&mut d, &y, y_label);
    let base = HEIGHT - BOTTOM;
    d.line(LEFT, base, WIDTH - RIGHT, base, "#000", 1.0);
    for t in ticks(x.d0, x.d1, 8) {
        let px = x.map(t);
        d.line(px, base, px, base + 4.0, "#000", 1.0);
        d.text(px, base + 16.0, "middle", 11.0, &tick_label(t));
    }
    d.text((LEFT + WIDTH - RIGHT) / 2.0, base + 40.0, "middle", 12.0, x_label);
    if diagonal {
        d.line(x.map(x.d0), y.map(x.d0), x.map(x.d1), y.map(x.d1), "#999", 1.0);
    }
    for &(px, py) in points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        d.circle(x.map(px), y.map(py), 3.0, PALETTE[0]);
    }
    d.finish()
}

/// Grouped bars: one cluster per category, one bar per series.
pub fn bars(title: &str, y_label: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    let mut d = Doc::new(WIDTH, HEIGHT, title);
    let (_, hi) = extent(series.iter().flat_map(|s| s.1.iter().copied()));
    let hi = if hi.is_finite() && hi > 0.0 { hi * 1.1 } else { 1.0 };
    let y = Scale::new(0.0, hi, HEIGHT - BOTTOM, TOP);
    y_axis(&mut d, &y, y_label);
    let slot = (WIDTH - LEFT - RIGHT) / categories.len().max(1) as f64;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    for (ci, cat) in categories.iter().enumerate() {
        let x0 = LEFT + slot * ci as f64 + slot * 0.1;
        for (si, (_, values)) in series.iter().enumerate() {
            let v = values.get(ci).copied().unwrap_or(0.0);
            if !v.is_finite() {
                continue;
            }
            let top = y.map(v);
            let color = PALETTE[si % PALETTE.len()];
            d.rect(x0 + bar * si as f64, top, bar, y.map(0.0) - top, color, "none");
            d.text(x0 + bar * (si as f64 + 0.5), top - 3.0, "middle", 10.0, &tick_label(v));
        }
        d.text(x0 + slot * 0.4, HEIGHT - BOTTOM + 16.0, "middle", 12.0, cat);
    }
    d.line(LEFT, HEIGHT - BOTTOM, WIDTH - RIGHT, HEIGHT - BOTTOM, "#000", 1.0);
    for (si, (name, _)) in series.iter().enumerate() {
        let lx = LEFT + 10.0 + 120.0 * (si % 5) as f64;
        let ly = HEIGHT - 40.0 + 16.0 * (si / 5) as f64;
        d.rect(lx, ly - 9.0, 10.0, 10.0, PALETTE[si % PALETTE.len()], "none");
        d.text(lx + 14.0, ly, "start", 11.0, name);
    }
    d.finish()
}

/// Heat map of counts, shaded by row-normalized fraction (rows = truth).
pub fn confusion(title: &str, classes: &[String], matrix: &[Vec<u64>]) -> String {
    let k = classes.len().max(1);
    let cell = (360.0 / k as f64).clamp(30.0, 80.0);
    let (x0, y0) = (140.0, 60.0);
    let w = x0 + cell * k as f64 + 40.0;
    let h = y0 + cell * k as f64 + 120.0;
    let mut d = Doc::new(w, h, title);
    for (r, row) in matrix.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (c, &count) in row.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let shade = |full: f64| (255.0 - frac * (255.0 - full)).round() as u8;
            let fill = format!("#{:02x}{:02x}{:02x}", shade(0x44 as f64), shade(0x77 as f64), shade(0xaa as f64));
            let (cx, cy) = (x0 + cell * c as f64, y0 + cell * r as f64);
            d.rect(cx, cy, cell, cell, &fill, "#666");
            d.text(cx + cell / 2.0, cy + cell / 2.0 + 4.0, "middle", 12.0, &count.to_string());
        }
    }
    for (i, name) in classes.iter().enumerate() {
        let mid = cell * (i as f64 + 0.5);
        d.text(x0 - 6.0, y0 + mid + 4.0, "end", 11.0, name);
        d.rotated_text(x0 + mid, y0 + cell * k as f64 + 12.0, -40.0, "end", name);
    }
    d.text(x0 + cell * k as f64 / 2.0, h - 12.0, "middle", 12.0, "predicted");
    d.rotated_text(14.0, y0 + cell * k as f64 / 2.0, -90.0, "middle", "truth");
    d.finish()
}
