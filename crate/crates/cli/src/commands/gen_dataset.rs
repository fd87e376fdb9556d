//! `gen-dataset`: build and persist a noisy/clean pair cache, either from a
//! directory of images or from the synthetic scene generator.

use std::path::{Path, PathBuf};

use clap::Args;
use ghostforge_core::dataset::{
    generate_pairs, ingest, persist, split_counts, DatasetManifest, NORMALIZATION_MODE,
};
use ghostforge_core::{synth, Error, Result};
use serde::{Deserialize, Serialize};

use crate::config;

use super::noise_model;

/// Source name that selects the synthetic generator instead of a directory.
pub const SYNTHETIC_SOURCE: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDatasetConfig {
    /// "synthetic" or a directory of images.
    pub source: String,
    pub ingest_seed: u64,
    pub count: usize,
    pub size: usize,
    pub pattern_seed: u64,
    pub n_patterns: usize,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub out: String,
}

impl Default for GenDatasetConfig {
    fn default() -> Self {
        GenDatasetConfig {
            source: SYNTHETIC_SOURCE.into(),
            ingest_seed: 1,
            count: 200,
            size: 32,
            pattern_seed: 7,
            n_patterns: 500,
            noise_sigma: 0.0,
            noise_seed: 0,
            split_seed: 3,
            train_fraction: 0.8,
            validation_fraction: 0.0,
            test_fraction: 0.2,
            out: "out/dataset".into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// JSON config file or a previous run's manifest
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Image directory, or "synthetic" for generated scenes
    #[arg(long)]
    pub source: Option<String>,
    /// Seed for image selection order / scene generation
    #[arg(long)]
    pub ingest_seed: Option<u64>,
    /// Number of images in the dataset
    #[arg(long)]
    pub count: Option<usize>,
    /// Working resolution
    #[arg(long)]
    pub size: Option<usize>,
    /// Pattern sequence seed
    #[arg(long, alias = "pattern-seed")]
    pub seed: Option<u64>,
    /// Patterns per measurement sequence
    #[arg(long)]
    pub n_patterns: Option<usize>,
    /// Relative detector noise sigma; 0 disables noise
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Seed of the detector noise stream
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Seed of the train/validation/test shuffle
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Fraction of images in the training split
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Fraction of images in the validation split
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Fraction of images in the test split
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Output directory (becomes the dataset cache)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn resolve(args: &GenDatasetArgs) -> Result<GenDatasetConfig> {
    let mut cfg: GenDatasetConfig = config::load(args.config.as_deref())?;
    if let Some(v) = &args.source {
        cfg.source = v.clone();
    }
    if let Some(v) = args.ingest_seed {
        cfg.ingest_seed = v;
    }
    if let Some(v) = args.count {
        cfg.count = v;
    }
    if let Some(v) = args.size {
        cfg.size = v;
    }
    if let Some(v) = args.seed {
        cfg.pattern_seed = v;
    }
    if let Some(v) = args.n_patterns {
        cfg.n_patterns = v;
    }
    if let Some(v) = args.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.noise_seed {
        cfg.noise_seed = v;
    }
    if let Some(v) = args.split_seed {
        cfg.split_seed = v;
    }
    if let Some(v) = args.train_fraction {
        cfg.train_fraction = v;
    }
    if let Some(v) = args.validation_fraction {
        cfg.validation_fraction = v;
    }
    if let Some(v) = args.test_fraction {
        cfg.test_fraction = v;
    }
    if let Some(v) = &args.out {
        cfg.out = v.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

pub fn run(cfg: &GenDatasetConfig) -> Result<()> {
    if cfg.count == 0 {
        return Err(Error::config("count must be positive"));
    }
    if cfg.n_patterns == 0 {
        return Err(Error::config("n_patterns must be positive"));
    }
    let noise = noise_model(cfg.noise_sigma, cfg.noise_seed)?;

    let objects = if cfg.source == SYNTHETIC_SOURCE {
        synth::generate_objects(cfg.ingest_seed, cfg.count, cfg.size, cfg.size)?
    } else {
        ingest(Path::new(&cfg.source), cfg.size, cfg.ingest_seed, cfg.count)?
    };
    let pairs = generate_pairs(&objects, cfg.pattern_seed, cfg.n_patterns, &noise)?;
    let degenerate = pairs.iter().filter(|p| p.degenerate).count();
    if degenerate > 0 {
        log::warn!("{degenerate} of {} pairs are degenerate (no contrast)", pairs.len());
    }

    let counts = split_counts(
        pairs.len(),
        (cfg.train_fraction, cfg.validation_fraction, cfg.test_fraction),
    )?;
    let manifest = DatasetManifest {
        source: cfg.source.clone(),
        ingest_seed: cfg.ingest_seed,
        image_count: pairs.len(),
        resolution: cfg.size,
        pattern_seed: cfg.pattern_seed,
        pattern_count: cfg.n_patterns,
        noise,
        split_seed: cfg.split_seed,
        train_count: counts[0],
        validation_count: counts[1],
        test_count: counts[2],
        normalization: NORMALIZATION_MODE.into(),
        pair_ids: pairs.iter().map(|p| p.id.clone()).collect(),
        pairs_sha256: String::new(),
    };
    let out = Path::new(&cfg.out);
    let stamped = persist(out, &manifest, &pairs)?;
    config::write_manifest(out, "gen-dataset", cfg)?;
    println!(
        "cached {} pairs ({}/{}/{} train/validation/test) in {}",
        stamped.image_count, stamped.train_count, stamped.validation_count, stamped.test_count,
        out.display()
    );
    Ok(())
}
