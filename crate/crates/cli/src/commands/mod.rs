pub mod denoise;
pub mod evaluate;
pub mod gen_dataset;
pub mod reconstruct;
pub mod simulate;
pub mod train;

use ghostforge_core::grid::ImageGrid;
use ghostforge_core::optics::{NoiseModel, PatternDistribution};
use ghostforge_core::{gftn, Error, Result};
use std::path::Path;

use ghostforge_core::dataset::write_atomic;

pub fn parse_distribution(name: &str) -> Result<PatternDistribution> {
    match name {
        "uniform" => Ok(PatternDistribution::Uniform),
        "binary" => Ok(PatternDistribution::Binary),
        other => Err(Error::config(format!(
            "unknown pattern distribution '{other}' (expected uniform or binary)"
        ))),
    }
}

/// sigma <= 0 means exact measurements.
pub fn noise_model(sigma: f64, seed: u64) -> Result<NoiseModel> {
    if !sigma.is_finite() {
        return Err(Error::config(format!("noise sigma must be finite, got {sigma}")));
    }
    if sigma > 0.0 {
        Ok(NoiseModel::AdditiveGaussian { sigma, seed })
    } else {
        Ok(NoiseModel::None)
    }
}

/// Atomic PGM write via an in-memory buffer.
pub fn save_pgm_atomic(path: &Path, img: &ImageGrid) -> Result<()> {
    let mut buf = Vec::new();
    img.write_pgm(&mut buf)?;
    write_atomic(path, &buf)
}

/// Atomic single-tensor write of an image grid.
pub fn save_grid_atomic(path: &Path, img: &ImageGrid) -> Result<()> {
    let mut buf = Vec::new();
    gftn::write_tensor(&mut buf, &[img.height(), img.width()], img.data())?;
    write_atomic(path, &buf)
}
