//! Correlation reconstruction from bucket measurements.
//!
//! The differential method correlates the reference-normalized object signal
//! with the pattern fluctuations:
//!
//! ```text
//! O(x,y) = (1/N) * sum_i (S_i/R_i - <S>/<R>) * (I_i(x,y) - <I(x,y)>)
//! ```
//!
//! computed in two passes so the ensemble averages entering the formula are
//! the exact N-sample means. The traditional method is the plain covariance
//! of S with the patterns and serves as the quality baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::optics::{MeasurementRecord, Pattern};

/// Reconstruction algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconMethod {
    Differential,
    Traditional,
}

/// How many leading (pattern, record) pairs to use and with which method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub method: ReconMethod,
    pub n: usize,
}

/// A reconstructed image: signed pixel values plus the pattern count that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconImage {
    pub pixels: ImageGrid,
    pub pattern_count: usize,
}

impl ReconImage {
    fn new(pixels: ImageGrid, pattern_count: usize) -> Result<Self> {
        if !pixels.all_finite() {
            return Err(Error::contract(
                "reconstruction produced a non-finite pixel value",
            ));
        }
        Ok(ReconImage {
            pixels,
            pattern_count,
        })
    }
}

/// Result of rescaling a reconstruction into [0, 1] for display or as
/// network input. `degenerate` marks a constant input, which has no usable
/// contrast and maps to a flat 0.5 image.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub pixels: ImageGrid,
    pub degenerate: bool,
}

fn validate_sequences<'a>(
    patterns: &'a [Pattern],
    records: &[MeasurementRecord],
    n: usize,
) -> Result<(&'a ImageGrid, usize, usize)> {
    if n == 0 {
        return Err(Error::contract("reconstruction needs at least one pattern"));
    }
    if patterns.len() < n || records.len() < n {
        return Err(Error::contract(format!(
            "asked for N={n} but only {} patterns / {} records are available",
            patterns.len(),
            records.len()
        )));
    }
    let first = &patterns[0].pixels;
    for (p, r) in patterns.iter().zip(records).take(n) {
        if p.index != r.index {
            return Err(Error::contract(format!(
                "pattern {} is paired with record {}",
                p.index, r.index
            )));
        }
        if !p.pixels.same_shape(first) {
            return Err(Error::shape(format!(
                "pattern {} is {}x{} but pattern {} is {}x{}",
                p.index,
                p.pixels.height(),
                p.pixels.width(),
                patterns[0].index,
                first.height(),
                first.width()
            )));
        }
    }
    Ok((first, first.height(), first.width()))
}

/// Mean pattern over the first n entries, plus mean S and mean R.
fn ensemble_means(
    patterns: &[Pattern],
    records: &[MeasurementRecord],
    n: usize,
) -> (Vec<f64>, f64, f64) {
    let numel = patterns[0].pixels.data().len();
    let mut mean_i = vec![0.0; numel];
    let mut sum_s = 0.0;
    let mut sum_r = 0.0;
    for (p, r) in patterns.iter().zip(records).take(n) {
        for (m, &v) in mean_i.iter_mut().zip(p.pixels.data()) {
            *m += v;
        }
        sum_s += r.s;
        sum_r += r.r;
    }
    let inv = 1.0 / n as f64;
    for m in &mut mean_i {
        *m *= inv;
    }
    (mean_i, sum_s * inv, sum_r * inv)
}

/// Differential correlation reconstruction over the first `n` pairs.
pub fn differential_cgi(
    patterns: &[Pattern],
    records: &[MeasurementRecord],
    n: usize,
) -> Result<ReconImage> {
    let (_, h, w) = validate_sequences(patterns, records, n)?;
    for r in records.iter().take(n) {
        if !(r.r > 0.0) {
            return Err(Error::DegenerateMeasurement(format!(
                "record {} has non-positive reference intensity R = {}",
                r.index, r.r
            )));
        }
    }
    let (mean_i, mean_s, mean_r) = ensemble_means(patterns, records, n);
    let baseline = mean_s / mean_r;

    let mut out = vec![0.0; h * w];
    for (p, r) in patterns.iter().zip(records).take(n) {
        let weight = r.s / r.r - baseline;
        for ((o, &pv), &mv) in out.iter_mut().zip(p.pixels.data()).zip(&mean_i) {
            *o += weight * (pv - mv);
        }
    }
    let inv = 1.0 / n as f64;
    for o in &mut out {
        *o *= inv;
    }
    ReconImage::new(ImageGrid::from_vec(h, w, out)?, n)
}

/// Traditional correlation reconstruction: covariance of S with the pattern.
pub fn traditional_cgi(
    patterns: &[Pattern],
    records: &[MeasurementRecord],
    n: usize,
) -> Result<ReconImage> {
    let (_, h, w) = validate_sequences(patterns, records, n)?;
    let (mean_i, mean_s, _) = ensemble_means(patterns, records, n);

    let mut out = vec![0.0; h * w];
    for (p, r) in patterns.iter().zip(records).take(n) {
        let weight = r.s - mean_s;
        for ((o, &pv), &mv) in out.iter_mut().zip(p.pixels.data()).zip(&mean_i) {
            *o += weight * (pv - mv);
        }
    }
    let inv = 1.0 / n as f64;
    for o in &mut out {
        *o *= inv;
    }
    ReconImage::new(ImageGrid::from_vec(h, w, out)?, n)
}

/// Run the method selected by `config` on the leading pairs.
pub fn reconstruct(
    patterns: &[Pattern],
    records: &[MeasurementRecord],
    config: &ReconConfig,
) -> Result<ReconImage> {
    match config.method {
        ReconMethod::Differential => differential_cgi(patterns, records, config.n),
        ReconMethod::Traditional => traditional_cgi(patterns, records, config.n),
    }
}

/// Affine rescale sending min to 0 and max to 1. A constant input has no
/// contrast to stretch; it maps to all 0.5 and sets `degenerate`.
pub fn normalize_unit(img: &ImageGrid) -> Normalized {
    let (min, max) = img.min_max();
    if !(max > min) {
        return Normalized {
            pixels: ImageGrid::filled(img.height(), img.width(), 0.5),
            degenerate: true,
        };
    }
    let range = max - min;
    Normalized {
        pixels: img.map(|v| (v - min) / range),
        degenerate: false,
    }
}
