//! `reconstruct`: rebuild images from a measurement log at one or more
//! pattern counts. Patterns are regenerated from the log header, so the
//! log plus this config fully determine the output.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use ghostforge_core::optics::read_measurement_log;
use ghostforge_core::recon::{normalize_unit, reconstruct, ReconConfig, ReconMethod};
use ghostforge_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config;

use super::{save_grid_atomic, save_pgm_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Path of the measurement log.
    pub log: String,
    /// Pattern counts to reconstruct at; empty means the full log.
    pub sweep: Vec<usize>,
    pub method: ReconMethod,
    pub out: String,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            log: String::new(),
            sweep: Vec::new(),
            method: ReconMethod::Differential,
            out: "out/reconstruct".into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// JSON config file or a previous run's manifest
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Measurement log to reconstruct from
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Comma-separated pattern counts, e.g. 250,500,1000
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<usize>>,
    /// Single pattern count (shorthand for a one-element sweep)
    #[arg(long, conflicts_with = "sweep")]
    pub n_patterns: Option<usize>,
    /// Reconstruction method: differential or traditional
    #[arg(long)]
    pub method: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_method(name: &str) -> Result<ReconMethod> {
    match name {
        "differential" => Ok(ReconMethod::Differential),
        "traditional" => Ok(ReconMethod::Traditional),
        other => Err(Error::config(format!(
            "unknown reconstruction method '{other}' (expected differential or traditional)"
        ))),
    }
}

pub fn resolve(args: &ReconstructArgs) -> Result<ReconstructConfig> {
    let mut cfg: ReconstructConfig = config::load(args.config.as_deref())?;
    if let Some(v) = &args.log {
        cfg.log = v.to_string_lossy().into_owned();
    }
    if let Some(v) = &args.sweep {
        cfg.sweep = v.clone();
    }
    if let Some(v) = args.n_patterns {
        cfg.sweep = vec![v];
    }
    if let Some(v) = &args.method {
        cfg.method = parse_method(v)?;
    }
    if let Some(v) = &args.out {
        cfg.out = v.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

pub fn run(cfg: &ReconstructConfig) -> Result<()> {
    if cfg.log.is_empty() {
        return Err(Error::config("a measurement log is required (--log PATH)"));
    }
    let log = read_measurement_log(Path::new(&cfg.log))?;
    let available = log.records.len();
    let sweep = if cfg.sweep.is_empty() {
        vec![available]
    } else {
        cfg.sweep.clone()
    };
    for &n in &sweep {
        if n == 0 {
            return Err(Error::invalid("pattern counts in the sweep must be positive"));
        }
        if n > available {
            return Err(Error::invalid(format!(
                "requested N={n} but the log holds only {available} measurements"
            )));
        }
    }

    let max_n = sweep.iter().copied().max().unwrap_or(0);
    let patterns = log.header.source()?.take(max_n);
    let out = Path::new(&cfg.out);
    fs::create_dir_all(out)?;
    for &n in &sweep {
        let recon = reconstruct(
            &patterns,
            &log.records,
            &ReconConfig {
                method: cfg.method,
                n,
            },
        )?;
        let normalized = normalize_unit(&recon.pixels);
        if normalized.degenerate {
            log::warn!("reconstruction at N={n} has no contrast");
        }
        save_grid_atomic(&out.join(format!("recon-N{n}.gftn")), &recon.pixels)?;
        save_pgm_atomic(&out.join(format!("recon-N{n}.pgm")), &normalized.pixels)?;
    }
    config::write_manifest(out, "reconstruct", cfg)?;
    println!(
        "reconstructed {} image(s) from {} into {}",
        sweep.len(),
        cfg.log,
        out.display()
    );
    Ok(())
}
