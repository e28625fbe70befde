//! Line-chart images from indicator series.
//!
//! Each selected indicator is thinned to at most `M` points, min-max
//! normalized, and drawn as a one-pixel binary polyline. The charts of one
//! record form the `K` input channels of the vision branch.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::RawRecord;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Default cap on points per chart.
pub const DEFAULT_MAX_POINTS: usize = 100;

/// Default chart resolution (square).
pub const DEFAULT_RESOLUTION: usize = 224;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    /// Maximum number of points kept per series (M ≥ 2).
    pub max_points: usize,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy {
            max_points: DEFAULT_MAX_POINTS,
        }
    }
}

impl SamplingPolicy {
    pub fn new(max_points: usize) -> Result<Self> {
        if max_points < 2 {
            return Err(Error::Config(format!(
                "max points must be >= 2, got {max_points}"
            )));
        }
        Ok(SamplingPolicy { max_points })
    }
}

/// How a chart is drawn. Only binary single-channel lines exist today.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartMode {
    #[default]
    Binary,
}

/// Keeps the series when `N ≤ M`, otherwise the values at `floor(i·N/M)`
/// for `i = 0..M`.
pub fn interval_sample(series: &[f64], max_points: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Config("cannot sample an empty series".into()));
    }
    if max_points < 2 {
        return Err(Error::Config(format!(
            "max points must be >= 2, got {max_points}"
        )));
    }
    let n = series.len();
    if n <= max_points {
        return Ok(series.to_vec());
    }
    Ok((0..max_points).map(|i| series[i * n / max_points]).collect())
}

/// `(x − min)/(max − min)`; a constant series maps to 0.5 everywhere.
pub fn normalize_series(series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Config("cannot normalize an empty series".into()));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "normalize_series",
            format!("non-finite value at index {i}"),
        ));
    }
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi == lo {
        return Ok(vec![0.5; series.len()]);
    }
    let span = hi - lo;
    Ok(series.iter().map(|&v| (v - lo) / span).collect())
}

/// Pixel (row, column) of point `i` out of `p`.
fn point_pixel(i: usize, p: usize, v: f64, h: usize, w: usize) -> (i64, i64) {
    let col = if p == 1 {
        (w - 1) / 2
    } else {
        ((i * (w - 1)) as f64 / (p - 1) as f64).round() as usize
    };
    let row = (h - 1) - (v.clamp(0.0, 1.0) * (h - 1) as f64).round() as usize;
    (row as i64, col as i64)
}

/// Sets every pixel on the Bresenham segment between two (row, col) points.
fn draw_segment(from: (i64, i64), to: (i64, i64), w: usize, pixels: &mut [u8]) {
    let (mut y, mut x) = from;
    let (y1, x1) = to;
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        pixels[y as usize * w + x as usize] = 1;
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn rasterize_into(values: &[f64], h: usize, w: usize, pixels: &mut [u8]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("cannot rasterize an empty series".into()));
    }
    if h == 0 || w == 0 {
        return Err(Error::Config(format!("chart size {h}×{w} must be positive")));
    }
    debug_assert_eq!(pixels.len(), h * w);
    let p = values.len();
    let mut prev = point_pixel(0, p, values[0], h, w);
    draw_segment(prev, prev, w, pixels);
    for (i, &v) in values.iter().enumerate().skip(1) {
        let next = point_pixel(i, p, v, h, w);
        draw_segment(prev, next, w, pixels);
        prev = next;
    }
    Ok(())
}

/// Draws a normalized series as an `H×W` binary image (1.0 = line).
///
/// Point `i` lands in column `round(i·(W−1)/(P−1))` and row
/// `(H−1) − round(v·(H−1))`; consecutive points are joined by Bresenham
/// segments.
pub fn rasterize_polyline(values: &[f64], h: usize, w: usize) -> Result<Tensor<f64>> {
    let mut pixels = vec![0u8; h * w];
    rasterize_into(values, h, w, &mut pixels)?;
    Tensor::from_vec(vec![h, w], pixels.into_iter().map(f64::from).collect())
}

/// `K` binary charts of one record, channel-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChartStack {
    k: usize,
    h: usize,
    w: usize,
    pixels: Vec<u8>,
}

impl ChartStack {
    pub fn channels(&self) -> usize {
        self.k
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    /// Pixels of channel `i`, row-major, values in {0, 1}.
    pub fn channel(&self, i: usize) -> &[u8] {
        &self.pixels[i * self.h * self.w..(i + 1) * self.h * self.w]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// The stack as a `K×H×W` tensor.
    pub fn images<T: Scalar>(&self) -> Tensor<T> {
        let mut out = vec![T::zero(); self.pixels.len()];
        self.write_into(&mut out);
        Tensor::from_vec(vec![self.k, self.h, self.w], out).expect("consistent extents")
    }

    pub(crate) fn write_into<T: Scalar>(&self, out: &mut [T]) {
        for (o, &p) in out.iter_mut().zip(&self.pixels) {
            *o = if p != 0 { T::one() } else { T::zero() };
        }
    }

    pub fn set_pixels(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }
}

/// Renders the selected indicators of `record` in selection order.
pub fn render_charts(
    record: &RawRecord,
    selection: &[String],
    policy: SamplingPolicy,
    h: usize,
    w: usize,
) -> Result<ChartStack> {
    if selection.is_empty() {
        return Err(Error::Config("chart selection is empty".into()));
    }
    let mut pixels = vec![0u8; selection.len() * h * w];
    for (name, plane) in selection.iter().zip(pixels.chunks_mut(h * w)) {
        let series = record.indicator(name).ok_or_else(|| Error::Validation {
            record: record.id.clone(),
            field: name.clone(),
            detail: "selected indicator is missing".into(),
        })?;
        let sampled = interval_sample(series, policy.max_points)?;
        let normalized = normalize_series(&sampled)?;
        rasterize_into(&normalized, h, w, plane)?;
    }
    Ok(ChartStack {
        k: selection.len(),
        h,
        w,
        pixels,
    })
}

/// Encodes one binary chart as 8-bit PGM (P5): 0 → 0, 1 → 255.
pub fn encode_pgm(pixels: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| if p != 0 { 255u8 } else { 0 }));
    out
}

/// Writes `{record_id}_{indicator}.pgm` for every channel; returns the paths.
pub fn export_pgm(
    stack: &ChartStack,
    record_id: &str,
    selection: &[String],
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(stack.k);
    for (i, name) in selection.iter().enumerate().take(stack.k) {
        let path = dir.join(format!("{record_id}_{name}.pgm"));
        let mut f = BufWriter::new(File::create(&path)?);
        f.write_all(&encode_pgm(stack.channel(i), stack.h, stack.w))?;
        f.flush()?;
        paths.push(path);
    }
    Ok(paths)
}
