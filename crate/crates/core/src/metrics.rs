//! Image quality scores: MSE, PSNR, and SSIM.
//!
//! SSIM follows the original convention: Gaussian 11x11 window with sigma
//! 1.5, K1 = 0.01, K2 = 0.03, dynamic range L = 1 (images are scored in
//! [0, 1]). Only windows fully inside the image are evaluated and the score
//! is the mean of the per-window map.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4; // (0.01 * L)^2
pub const SSIM_C2: f64 = 9e-4; // (0.03 * L)^2

fn check_shapes(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "metric inputs differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Mean squared difference over all pixels.
pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.data().len();
    if n == 0 {
        return Err(Error::contract("mse of an empty image"));
    }
    let mut acc = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc += d * d;
    }
    Ok(acc / n as f64)
}

/// Peak signal-to-noise ratio in dB for peak value `peak`. Identical images
/// report positive infinity.
pub fn psnr(a: &ImageGrid, b: &ImageGrid, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("psnr peak must be positive, got {peak}")));
    }
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// Normalized 1-D Gaussian window; the 2-D window is its outer product.
fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    let mut total = 0.0;
    for (i, slot) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *slot = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        total += *slot;
    }
    for slot in &mut g {
        *slot /= total;
    }
    g
}

/// Valid-mode correlation with a separable window: horizontal then vertical.
fn window_means(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &gi) in g.iter().enumerate() {
                acc += gi * src[y * w + x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &gi) in g.iter().enumerate() {
                acc += gi * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Structural similarity index between two images in [0, 1].
pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_shapes(a, b)?;
    let h = a.height();
    let w = a.width();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::contract(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let ad = a.data();
    let bd = b.data();
    let sq = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * x).collect() };
    let prod: Vec<f64> = ad.iter().zip(bd).map(|(x, y)| x * y).collect();

    let mu_a = window_means(ad, h, w, &g);
    let mu_b = window_means(bd, h, w, &g);
    let m_aa = window_means(&sq(ad), h, w, &g);
    let m_bb = window_means(&sq(bd), h, w, &g);
    let m_ab = window_means(&prod, h, w, &g);

    let mut acc = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
        acc += num / den;
    }
    Ok(acc / mu_a.len() as f64)
}

/// One scored image/method combination, emitted as a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub image: String,
    pub method: String,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl QualityReport {
    pub fn score(image: &str, method: &str, candidate: &ImageGrid, reference: &ImageGrid) -> Result<Self> {
        Ok(QualityReport {
            image: image.to_string(),
            method: method.to_string(),
            mse: mse(candidate, reference)?,
            psnr: psnr(candidate, reference, 1.0)?,
            ssim: ssim(candidate, reference)?,
        })
    }
}

pub const CSV_HEADER: &str = "image,method,mse,psnr,ssim";

pub fn format_csv(reports: &[QualityReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(out, "{},{},{},{},{}", r.image, r.method, r.mse, r.psnr, r.ssim)
            .expect("writing to a String cannot fail");
    }
    out
}

pub fn write_csv(path: &Path, reports: &[QualityReport]) -> Result<()> {
    fs::write(path, format_csv(reports))?;
    Ok(())
}
