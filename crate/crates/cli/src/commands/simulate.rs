//! `simulate`: measure one object image with a seeded pattern sequence and
//! write the measurement log.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use ghostforge_core::dataset::{decode_gray, resample_area, write_atomic};
use ghostforge_core::optics::{
    format_measurement_log, measure_sequence, LogHeader, ObjectImage, PatternDistribution,
    PatternSource,
};
use ghostforge_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config;

use super::{noise_model, parse_distribution, save_grid_atomic, save_pgm_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Path of the object image (PGM or PNG).
    pub object: String,
    pub seed: u64,
    pub n_patterns: usize,
    pub size: usize,
    pub distribution: PatternDistribution,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub out: String,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            object: String::new(),
            seed: 7,
            n_patterns: 1000,
            size: 32,
            distribution: PatternDistribution::Uniform,
            noise_sigma: 0.0,
            noise_seed: 0,
            out: "out/simulate".into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON config file or a previous run's manifest
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Object image (PGM/PNG), resampled to the working resolution
    #[arg(long)]
    pub object: Option<String>,
    /// Pattern sequence seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of illumination patterns
    #[arg(long)]
    pub n_patterns: Option<usize>,
    /// Working resolution (object and patterns are size x size)
    #[arg(long)]
    pub size: Option<usize>,
    /// Pattern distribution: uniform or binary
    #[arg(long)]
    pub distribution: Option<String>,
    /// Relative detector noise sigma; 0 disables noise
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Seed of the detector noise stream
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn resolve(args: &SimulateArgs) -> Result<SimulateConfig> {
    let mut cfg: SimulateConfig = config::load(args.config.as_deref())?;
    if let Some(v) = &args.object {
        cfg.object = v.clone();
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.n_patterns {
        cfg.n_patterns = v;
    }
    if let Some(v) = args.size {
        cfg.size = v;
    }
    if let Some(v) = &args.distribution {
        cfg.distribution = parse_distribution(v)?;
    }
    if let Some(v) = args.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.noise_seed {
        cfg.noise_seed = v;
    }
    if let Some(v) = &args.out {
        cfg.out = v.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

pub fn run(cfg: &SimulateConfig) -> Result<()> {
    if cfg.object.is_empty() {
        return Err(Error::config("an object image is required (--object PATH)"));
    }
    if cfg.size == 0 {
        return Err(Error::config("size must be positive"));
    }
    let noise = noise_model(cfg.noise_sigma, cfg.noise_seed)?;

    let raw = decode_gray(Path::new(&cfg.object))?;
    let object = ObjectImage::clamped(resample_area(&raw, cfg.size, cfg.size));
    let source = PatternSource::new(cfg.seed, cfg.distribution, cfg.size, cfg.size)?;
    let patterns = source.take(cfg.n_patterns);
    let records = measure_sequence(&object, &patterns, &noise)?;

    let header = LogHeader {
        seed: cfg.seed,
        count: cfg.n_patterns,
        height: cfg.size,
        width: cfg.size,
        distribution: cfg.distribution,
        noise,
    };
    let out = Path::new(&cfg.out);
    fs::create_dir_all(out)?;
    let log_path = out.join("measurements.log");
    write_atomic(&log_path, format_measurement_log(&header, &records)?.as_bytes())?;
    save_grid_atomic(&out.join("object.gftn"), object.transmittance())?;
    save_pgm_atomic(&out.join("object.pgm"), object.transmittance())?;
    config::write_manifest(out, "simulate", cfg)?;
    println!("wrote {} measurements to {}", records.len(), log_path.display());
    Ok(())
}
