//! Two-arm bucket measurement model.
//!
//! A seeded source produces random illumination patterns. For each pattern
//! the object arm integrates the light passed through the object's
//! transmittance into a single bucket value S, while the reference arm
//! integrates the bare pattern into R. Patterns are keyed by (seed, index) so
//! any pattern can be regenerated on demand without storing the sequence.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::seed;

/// Salt folded into the noise seed so a shared seed value never makes the
/// noise draw replay a pattern's pixel stream.
const NOISE_SALT: u64 = 0x6e6f_6973;

/// Pixel-value law for generated patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternDistribution {
    /// Independent uniform [0, 1) gray levels (default).
    Uniform,
    /// Independent fair coin flips to {0, 1}.
    Binary,
}

/// One illumination pattern, reproducible from (seed, index, height, width).
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub index: usize,
    pub pixels: ImageGrid,
}

/// Object under test, a transmittance map with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectImage {
    transmittance: ImageGrid,
}

impl ObjectImage {
    /// Validates that every value already lies in [0, 1].
    pub fn new(transmittance: ImageGrid) -> Result<Self> {
        if transmittance
            .data()
            .iter()
            .any(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(Error::invalid(
                "object transmittance must lie in [0, 1] everywhere",
            ));
        }
        Ok(ObjectImage { transmittance })
    }

    /// Clamps out-of-range values into [0, 1] instead of rejecting them.
    pub fn clamped(transmittance: ImageGrid) -> Self {
        ObjectImage {
            transmittance: transmittance.map(|v| v.clamp(0.0, 1.0)),
        }
    }

    pub fn transmittance(&self) -> &ImageGrid {
        &self.transmittance
    }

    pub fn height(&self) -> usize {
        self.transmittance.height()
    }

    pub fn width(&self) -> usize {
        self.transmittance.width()
    }
}

/// One bucket-detector sample: object-arm intensity S and reference-arm
/// intensity R for pattern `index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    pub index: usize,
    pub s: f64,
    pub r: f64,
}

/// Detector noise applied to the object-arm intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    /// Exact measurements.
    None,
    /// S is scaled by (1 + e) with e drawn from N(0, sigma^2), then clamped
    /// at zero. The draw for record i is keyed by (seed, i).
    AdditiveGaussian { sigma: f64, seed: u64 },
}

impl NoiseModel {
    fn validate(&self) -> Result<()> {
        if let NoiseModel::AdditiveGaussian { sigma, .. } = self {
            if !(*sigma >= 0.0) {
                return Err(Error::invalid(format!(
                    "noise sigma must be non-negative, got {sigma}"
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic pattern generator: pattern i is a pure function of
/// (seed, distribution, i, height, width).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternSource {
    pub seed: u64,
    pub distribution: PatternDistribution,
    pub height: usize,
    pub width: usize,
}

impl PatternSource {
    pub fn new(
        seed: u64,
        distribution: PatternDistribution,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "pattern dimensions must be positive, got {height}x{width}"
            )));
        }
        Ok(PatternSource {
            seed,
            distribution,
            height,
            width,
        })
    }

    pub fn uniform(seed: u64, height: usize, width: usize) -> Result<Self> {
        PatternSource::new(seed, PatternDistribution::Uniform, height, width)
    }

    /// Regenerate pattern `index`; bit-identical for equal inputs.
    pub fn pattern(&self, index: usize) -> Pattern {
        let mut rng = seed::stream_rng(self.seed, index as u64);
        let n = self.height * self.width;
        let data: Vec<f64> = match self.distribution {
            PatternDistribution::Uniform => (0..n).map(|_| rng.random::<f64>()).collect(),
            PatternDistribution::Binary => (0..n)
                .map(|_| if rng.random::<f64>() < 0.5 { 0.0 } else { 1.0 })
                .collect(),
        };
        Pattern {
            index,
            pixels: ImageGrid::from_vec(self.height, self.width, data)
                .expect("dimensions validated at construction"),
        }
    }

    /// Materialize patterns 0..n. Generation fans out across indices; each
    /// pattern is produced whole by one task, so the result is identical for
    /// any thread count.
    pub fn take(&self, n: usize) -> Vec<Pattern> {
        (0..n).into_par_iter().map(|i| self.pattern(i)).collect()
    }
}

/// Generate `count` uniform-[0,1) patterns keyed by `seed`.
pub fn generate_patterns(seed: u64, count: usize, height: usize, width: usize) -> Result<Vec<Pattern>> {
    Ok(PatternSource::uniform(seed, height, width)?.take(count))
}

/// One bucket measurement: S = sum(I * T) over pixels, R = sum(I).
pub fn measure(
    object: &ObjectImage,
    pattern: &Pattern,
    noise: &NoiseModel,
) -> Result<MeasurementRecord> {
    noise.validate()?;
    let t = object.transmittance();
    let i = &pattern.pixels;
    if !t.same_shape(i) {
        return Err(Error::shape(format!(
            "object is {}x{} but pattern {} is {}x{}",
            t.height(),
            t.width(),
            pattern.index,
            i.height(),
            i.width()
        )));
    }
    let mut s = 0.0;
    let mut r = 0.0;
    for (iv, tv) in i.data().iter().zip(t.data()) {
        s += iv * tv;
        r += iv;
    }
    if !(r > 0.0) {
        return Err(Error::DegenerateMeasurement(format!(
            "pattern {} has zero total intensity (R = {r})",
            pattern.index
        )));
    }
    if let NoiseModel::AdditiveGaussian { sigma, seed: ns } = noise {
        let mut rng = seed::stream_rng(seed::mix(*ns, NOISE_SALT), pattern.index as u64);
        let eps: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
        s = (s * (1.0 + eps)).max(0.0);
    }
    Ok(MeasurementRecord {
        index: pattern.index,
        s,
        r,
    })
}

/// Measure every pattern in order. Fans out across patterns; record i is
/// produced entirely by one task, so values and order never depend on the
/// thread count. The first failing pattern's error is reported.
pub fn measure_sequence(
    object: &ObjectImage,
    patterns: &[Pattern],
    noise: &NoiseModel,
) -> Result<Vec<MeasurementRecord>> {
    patterns
        .par_iter()
        .map(|p| measure(object, p, noise))
        .collect()
}

/// Header line of a measurement log; enough to regenerate the pattern
/// sequence and re-run the measurement exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub seed: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub distribution: PatternDistribution,
    pub noise: NoiseModel,
}

impl LogHeader {
    pub fn source(&self) -> Result<PatternSource> {
        PatternSource::new(self.seed, self.distribution, self.height, self.width)
    }
}

/// A parsed measurement log: header plus records in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLog {
    pub header: LogHeader,
    pub records: Vec<MeasurementRecord>,
}

/// Serialize a measurement log: one JSON header line, then one "i,S,R" line
/// per record. Intensities are written with 17 significant digits, which
/// round-trips every finite double exactly.
pub fn format_measurement_log(header: &LogHeader, records: &[MeasurementRecord]) -> Result<String> {
    if header.count != records.len() {
        return Err(Error::contract(format!(
            "header says {} records, got {}",
            header.count,
            records.len()
        )));
    }
    let mut out = serde_json::to_string(header).map_err(|e| Error::data(e.to_string()))?;
    out.push('\n');
    for rec in records {
        writeln!(out, "{},{:.16e},{:.16e}", rec.index, rec.s, rec.r)
            .expect("writing to a String cannot fail");
    }
    Ok(out)
}

pub fn write_measurement_log(
    path: &Path,
    header: &LogHeader,
    records: &[MeasurementRecord],
) -> Result<()> {
    fs::write(path, format_measurement_log(header, records)?)?;
    Ok(())
}

/// Parse a measurement log produced by [`format_measurement_log`].
pub fn parse_measurement_log(text: &str) -> Result<MeasurementLog> {
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::data("measurement log is empty"))?;
    let header: LogHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::data(format!("bad measurement log header: {e}")))?;
    let mut records = Vec::with_capacity(header.count);
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |field: Option<&str>, what: &str| -> Result<f64> {
            field
                .and_then(|f| f.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    Error::data(format!(
                        "measurement log line {}: bad {what} field",
                        lineno + 2
                    ))
                })
        };
        let index = parts
            .next()
            .and_then(|f| f.trim().parse::<usize>().ok())
            .ok_or_else(|| {
                Error::data(format!("measurement log line {}: bad index field", lineno + 2))
            })?;
        let s = parse(parts.next(), "S")?;
        let r = parse(parts.next(), "R")?;
        if parts.next().is_some() {
            return Err(Error::data(format!(
                "measurement log line {}: trailing fields",
                lineno + 2
            )));
        }
        if index != records.len() {
            return Err(Error::data(format!(
                "measurement log line {}: expected index {}, got {index}",
                lineno + 2,
                records.len()
            )));
        }
        records.push(MeasurementRecord { index, s, r });
    }
    if records.len() != header.count {
        return Err(Error::data(format!(
            "measurement log header says {} records, file has {}",
            header.count,
            records.len()
        )));
    }
    Ok(MeasurementLog { header, records })
}

pub fn read_measurement_log(path: &Path) -> Result<MeasurementLog> {
    parse_measurement_log(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, data: Vec<f64>) -> ImageGrid {
        ImageGrid::from_vec(h, w, data).unwrap()
    }

    #[test]
    fn same_seed_gives_bit_identical_patterns() {
        let a = generate_patterns(42, 5, 8, 8).unwrap();
        let b = generate_patterns(42, 5, 8, 8).unwrap();
        assert_eq!(a, b);
        // and individual regeneration matches the batch
        let src = PatternSource::uniform(42, 8, 8).unwrap();
        assert_eq!(src.pattern(3), a[3]);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_patterns(1, 1, 8, 8).unwrap();
        let b = generate_patterns(2, 1, 8, 8).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_count_is_empty() {
        assert!(generate_patterns(7, 0, 4, 4).unwrap().is_empty());
    }

    #[test]
    fn uniform_pixels_lie_in_unit_interval() {
        for p in generate_patterns(9, 20, 6, 6).unwrap() {
            assert!(p.pixels.data().iter().all(|&v| (0.0..1.0).contains(&v)));
        }
    }

    #[test]
    fn binary_pixels_are_zero_or_one() {
        let src = PatternSource::new(9, PatternDistribution::Binary, 6, 6).unwrap();
        for p in src.take(20) {
            assert!(p.pixels.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn per_pixel_mean_approaches_half() {
        // law-of-large-numbers pass over the generated ensemble
        let patterns = generate_patterns(1, 2000, 16, 16).unwrap();
        let mut mean = vec![0.0; 256];
        for p in &patterns {
            for (m, &v) in mean.iter_mut().zip(p.pixels.data()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= patterns.len() as f64;
        }
        for (i, &m) in mean.iter().enumerate() {
            assert!(
                (0.45..=0.55).contains(&m),
                "pixel {i} mean {m} outside [0.45, 0.55]"
            );
        }
    }

    #[test]
    fn transparent_object_gives_s_equal_r() {
        let object = ObjectImage::new(ImageGrid::filled(4, 4, 1.0)).unwrap();
        let src = PatternSource::uniform(3, 4, 4).unwrap();
        let rec = measure(&object, &src.pattern(0), &NoiseModel::None).unwrap();
        assert_eq!(rec.s, rec.r);
    }

    #[test]
    fn opaque_object_gives_zero_s() {
        let object = ObjectImage::new(ImageGrid::zeros(4, 4)).unwrap();
        let src = PatternSource::uniform(3, 4, 4).unwrap();
        let rec = measure(&object, &src.pattern(0), &NoiseModel::None).unwrap();
        assert_eq!(rec.s, 0.0);
        assert!(rec.r > 0.0);
    }

    #[test]
    fn hand_computed_buckets() {
        let object = ObjectImage::new(grid(2, 2, vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        let pattern = Pattern {
            index: 0,
            pixels: grid(2, 2, vec![0.5, 0.25, 0.75, 1.0]),
        };
        let rec = measure(&object, &pattern, &NoiseModel::None).unwrap();
        assert_eq!(rec.s, 1.5);
        assert_eq!(rec.r, 2.5);
    }

    #[test]
    fn all_zero_pattern_is_degenerate() {
        let object = ObjectImage::new(ImageGrid::filled(2, 2, 1.0)).unwrap();
        let pattern = Pattern {
            index: 7,
            pixels: ImageGrid::zeros(2, 2),
        };
        let err = measure(&object, &pattern, &NoiseModel::None).unwrap_err();
        assert!(matches!(err, Error::DegenerateMeasurement(_)));
        assert!(err.to_string().contains('7'));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let object = ObjectImage::new(ImageGrid::filled(2, 2, 1.0)).unwrap();
        let pattern = Pattern {
            index: 0,
            pixels: ImageGrid::filled(3, 3, 0.5),
        };
        assert!(matches!(
            measure(&object, &pattern, &NoiseModel::None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn s_never_exceeds_r_without_noise() {
        let src = PatternSource::uniform(11, 8, 8).unwrap();
        let mut rng = seed::stream_rng(50, 0);
        let data: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let object = ObjectImage::new(grid(8, 8, data)).unwrap();
        for p in src.take(50) {
            let rec = measure(&object, &p, &NoiseModel::None).unwrap();
            assert!(rec.s >= 0.0 && rec.s <= rec.r);
        }
    }

    #[test]
    fn measurement_is_linear_in_the_object() {
        let src = PatternSource::uniform(13, 6, 6).unwrap();
        let p = src.pattern(0);
        let mut rng = seed::stream_rng(51, 0);
        let t1: Vec<f64> = (0..36).map(|_| rng.random::<f64>() * 0.5).collect();
        let t2: Vec<f64> = (0..36).map(|_| rng.random::<f64>() * 0.5).collect();
        let combo: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
        let s1 = measure(&ObjectImage::new(grid(6, 6, t1)).unwrap(), &p, &NoiseModel::None)
            .unwrap()
            .s;
        let s2 = measure(&ObjectImage::new(grid(6, 6, t2)).unwrap(), &p, &NoiseModel::None)
            .unwrap()
            .s;
        let sc = measure(
            &ObjectImage::new(grid(6, 6, combo)).unwrap(),
            &p,
            &NoiseModel::None,
        )
        .unwrap()
        .s;
        assert!((sc - (s1 + s2)).abs() < 1e-12);
    }

    #[test]
    fn reference_ignores_the_object() {
        let src = PatternSource::uniform(17, 5, 5).unwrap();
        let p = src.pattern(2);
        let a = measure(
            &ObjectImage::new(ImageGrid::filled(5, 5, 0.2)).unwrap(),
            &p,
            &NoiseModel::None,
        )
        .unwrap();
        let b = measure(
            &ObjectImage::new(ImageGrid::filled(5, 5, 0.9)).unwrap(),
            &p,
            &NoiseModel::None,
        )
        .unwrap();
        assert_eq!(a.r, b.r);
    }

    #[test]
    fn sequence_matches_independent_calls() {
        let src = PatternSource::uniform(21, 4, 4).unwrap();
        let patterns = src.take(3);
        let object = ObjectImage::new(ImageGrid::filled(4, 4, 0.5)).unwrap();
        let noise = NoiseModel::AdditiveGaussian { sigma: 0.05, seed: 77 };
        let seq = measure_sequence(&object, &patterns, &noise).unwrap();
        for (i, p) in patterns.iter().enumerate() {
            let solo = measure(&object, p, &noise).unwrap();
            assert_eq!(seq[i], solo);
        }
    }

    #[test]
    fn empty_sequence_gives_empty_records() {
        let object = ObjectImage::new(ImageGrid::filled(4, 4, 0.5)).unwrap();
        assert!(measure_sequence(&object, &[], &NoiseModel::None)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn noise_is_reproducible_and_bounded_below() {
        let object = ObjectImage::new(ImageGrid::filled(4, 4, 0.5)).unwrap();
        let src = PatternSource::uniform(23, 4, 4).unwrap();
        let patterns = src.take(200);
        let noise = NoiseModel::AdditiveGaussian { sigma: 2.0, seed: 5 };
        let a = measure_sequence(&object, &patterns, &noise).unwrap();
        let b = measure_sequence(&object, &patterns, &noise).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.s >= 0.0));
        // with sigma this large some draws must clamp at zero
        assert!(a.iter().any(|r| r.s == 0.0));
    }

    #[test]
    fn negative_sigma_is_rejected() {
        let object = ObjectImage::new(ImageGrid::filled(2, 2, 0.5)).unwrap();
        let p = PatternSource::uniform(1, 2, 2).unwrap().pattern(0);
        let noise = NoiseModel::AdditiveGaussian { sigma: -0.1, seed: 0 };
        assert!(matches!(
            measure(&object, &p, &noise),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn object_image_validates_range() {
        assert!(ObjectImage::new(grid(1, 2, vec![0.0, 1.1])).is_err());
        let clamped = ObjectImage::clamped(grid(1, 2, vec![-0.5, 1.1]));
        assert_eq!(clamped.transmittance().data(), &[0.0, 1.0]);
    }

    #[test]
    fn log_round_trips_exactly() {
        let object = ObjectImage::new(ImageGrid::filled(4, 4, 0.37)).unwrap();
        let src = PatternSource::uniform(29, 4, 4).unwrap();
        let patterns = src.take(10);
        let noise = NoiseModel::AdditiveGaussian { sigma: 0.01, seed: 3 };
        let records = measure_sequence(&object, &patterns, &noise).unwrap();
        let header = LogHeader {
            seed: 29,
            count: records.len(),
            height: 4,
            width: 4,
            distribution: PatternDistribution::Uniform,
            noise,
        };
        let text = format_measurement_log(&header, &records).unwrap();
        let parsed = parse_measurement_log(&text).unwrap();
        assert_eq!(parsed.header, header);
        assert_eq!(parsed.records, records); // bit-exact S and R
    }

    #[test]
    fn log_with_hand_computed_toy_values() {
        let object = ObjectImage::new(grid(2, 2, vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        let pattern = Pattern {
            index: 0,
            pixels: grid(2, 2, vec![0.5, 0.25, 0.75, 1.0]),
        };
        let rec = measure(&object, &pattern, &NoiseModel::None).unwrap();
        let header = LogHeader {
            seed: 0,
            count: 1,
            height: 2,
            width: 2,
            distribution: PatternDistribution::Uniform,
            noise: NoiseModel::None,
        };
        let text = format_measurement_log(&header, &[rec]).unwrap();
        let body = text.lines().nth(1).unwrap();
        assert_eq!(body, "0,1.5000000000000000e0,2.5000000000000000e0");
    }

    #[test]
    fn log_rejects_corruption() {
        let header = LogHeader {
            seed: 0,
            count: 2,
            height: 2,
            width: 2,
            distribution: PatternDistribution::Uniform,
            noise: NoiseModel::None,
        };
        let recs = [
            MeasurementRecord { index: 0, s: 1.0, r: 2.0 },
            MeasurementRecord { index: 1, s: 1.5, r: 2.5 },
        ];
        let good = format_measurement_log(&header, &recs).unwrap();

        let missing_line = good.lines().take(2).collect::<Vec<_>>().join("\n");
        assert!(parse_measurement_log(&missing_line).is_err());

        let bad_index = good.replace("1,1.5", "5,1.5");
        assert!(parse_measurement_log(&bad_index).is_err());

        let bad_field = good.replace("2.5000000000000000e0", "xyz");
        assert!(parse_measurement_log(&bad_field).is_err());

        assert!(parse_measurement_log("").is_err());
    }
}
