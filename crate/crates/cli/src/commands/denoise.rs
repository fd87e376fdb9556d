//! `denoise`: run one image through a trained checkpoint, optionally inside
//! a bilateral pre/post sandwich.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use ghostforge_core::dataset::decode_gray;
use ghostforge_core::filters::BilateralConfig;
use ghostforge_core::unet::{denoise_with_filters, load_params};
use ghostforge_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config;

use super::{save_grid_atomic, save_pgm_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    pub checkpoint: String,
    pub input: String,
    pub pre_filter: bool,
    pub post_filter: bool,
    pub bilateral_radius: usize,
    pub bilateral_sigma_spatial: f64,
    pub bilateral_sigma_range: f64,
    pub out: String,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        let b = BilateralConfig::default();
        DenoiseConfig {
            checkpoint: String::new(),
            input: String::new(),
            pre_filter: false,
            post_filter: false,
            bilateral_radius: b.radius,
            bilateral_sigma_spatial: b.sigma_spatial,
            bilateral_sigma_range: b.sigma_range,
            out: "out/denoise".into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// JSON config file or a previous run's manifest
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Image to denoise (must match the checkpoint resolution)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Apply a bilateral filter before the network
    #[arg(long)]
    pub pre_filter: bool,
    /// Apply a bilateral filter after the network
    #[arg(long)]
    pub post_filter: bool,
    /// Bilateral neighborhood radius
    #[arg(long)]
    pub bilateral_radius: Option<usize>,
    /// Bilateral spatial sigma
    #[arg(long)]
    pub bilateral_sigma_spatial: Option<f64>,
    /// Bilateral range sigma
    #[arg(long)]
    pub bilateral_sigma_range: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn resolve(args: &DenoiseArgs) -> Result<DenoiseConfig> {
    let mut cfg: DenoiseConfig = config::load(args.config.as_deref())?;
    if let Some(v) = &args.checkpoint {
        cfg.checkpoint = v.to_string_lossy().into_owned();
    }
    if let Some(v) = &args.input {
        cfg.input = v.to_string_lossy().into_owned();
    }
    // boolean flags can only switch the stage on; use a config file to
    // switch one off again
    if args.pre_filter {
        cfg.pre_filter = true;
    }
    if args.post_filter {
        cfg.post_filter = true;
    }
    if let Some(v) = args.bilateral_radius {
        cfg.bilateral_radius = v;
    }
    if let Some(v) = args.bilateral_sigma_spatial {
        cfg.bilateral_sigma_spatial = v;
    }
    if let Some(v) = args.bilateral_sigma_range {
        cfg.bilateral_sigma_range = v;
    }
    if let Some(v) = &args.out {
        cfg.out = v.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

pub fn bilateral_config(radius: usize, sigma_spatial: f64, sigma_range: f64) -> BilateralConfig {
    BilateralConfig {
        radius,
        sigma_spatial,
        sigma_range,
    }
}

pub fn run(cfg: &DenoiseConfig) -> Result<()> {
    if cfg.checkpoint.is_empty() {
        return Err(Error::config("a checkpoint is required (--checkpoint PATH)"));
    }
    if cfg.input.is_empty() {
        return Err(Error::config("an input image is required (--input PATH)"));
    }
    let params = load_params(Path::new(&cfg.checkpoint))?;
    let img = decode_gray(Path::new(&cfg.input))?;
    let size = params.config.input_size;
    if img.height() != size || img.width() != size {
        return Err(Error::shape(format!(
            "input is {}x{} but the checkpoint expects {size}x{size}",
            img.height(),
            img.width()
        )));
    }
    let bilateral = bilateral_config(
        cfg.bilateral_radius,
        cfg.bilateral_sigma_spatial,
        cfg.bilateral_sigma_range,
    );
    let pre = cfg.pre_filter.then_some(&bilateral);
    let post = cfg.post_filter.then_some(&bilateral);
    let result = denoise_with_filters(&params, &img, pre, post)?;

    let out = Path::new(&cfg.out);
    fs::create_dir_all(out)?;
    save_grid_atomic(&out.join("denoised.gftn"), &result)?;
    save_pgm_atomic(&out.join("denoised.pgm"), &result)?;
    config::write_manifest(out, "denoise", cfg)?;
    println!("denoised {} into {}", cfg.input, out.display());
    Ok(())
}
