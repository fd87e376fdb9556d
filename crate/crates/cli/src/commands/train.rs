//! `train`: fit the denoising network to a dataset cache's training split
//! and write the checkpoint plus the loss history.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use ghostforge_core::dataset::{load, split_with_counts, write_atomic};
use ghostforge_core::unet::train::TrainConfig;
use ghostforge_core::unet::{build, save_params, UNetConfig};
use ghostforge_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCliConfig {
    /// Dataset cache directory (manifest.json + pairs.gftn).
    pub dataset: String,
    pub depth: usize,
    pub base_channels: usize,
    pub first_kernel: usize,
    pub inner_kernel: usize,
    pub dropout: f64,
    pub net_seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub shuffle_seed: u64,
    pub out: String,
}

/// Defaults are the desk-scale recipe: single-pair batches maximize the
/// optimizer step count on a small training split, and the raised epsilon
/// damps the incoherent part of single-sample gradients so a higher learning
/// rate stays stable. Every run records its settings in the manifest, so a
/// deviation from these values is always visible.
impl Default for TrainCliConfig {
    fn default() -> Self {
        let net = UNetConfig::default();
        TrainCliConfig {
            dataset: String::new(),
            depth: net.depth,
            base_channels: net.base_channels,
            first_kernel: net.first_kernel,
            inner_kernel: net.inner_kernel,
            dropout: 0.2,
            net_seed: net.seed,
            batch_size: 1,
            epochs: 3,
            learning_rate: 3e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 3e-3,
            shuffle_seed: 11,
            out: "out/train".into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config file or a previous run's manifest
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset cache directory
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Encoder/decoder levels
    #[arg(long)]
    pub depth: Option<usize>,
    /// Channels after the first convolution
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Kernel size of the first three convolutions
    #[arg(long)]
    pub first_kernel: Option<usize>,
    /// Kernel size of the remaining convolutions
    #[arg(long)]
    pub inner_kernel: Option<usize>,
    /// Bottleneck dropout rate in [0, 1)
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Weight initialization seed
    #[arg(long, alias = "net-seed")]
    pub seed: Option<u64>,
    /// Pairs per optimizer step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Passes over the training split
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Epoch shuffle / dropout mask seed
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn resolve(args: &TrainArgs) -> Result<TrainCliConfig> {
    let mut cfg: TrainCliConfig = config::load(args.config.as_deref())?;
    if let Some(v) = &args.dataset {
        cfg.dataset = v.to_string_lossy().into_owned();
    }
    if let Some(v) = args.depth {
        cfg.depth = v;
    }
    if let Some(v) = args.base_channels {
        cfg.base_channels = v;
    }
    if let Some(v) = args.first_kernel {
        cfg.first_kernel = v;
    }
    if let Some(v) = args.inner_kernel {
        cfg.inner_kernel = v;
    }
    if let Some(v) = args.dropout {
        cfg.dropout = v;
    }
    if let Some(v) = args.seed {
        cfg.net_seed = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.shuffle_seed {
        cfg.shuffle_seed = v;
    }
    if let Some(v) = &args.out {
        cfg.out = v.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

pub fn network_config(cfg: &TrainCliConfig, resolution: usize) -> UNetConfig {
    UNetConfig {
        input_size: resolution,
        depth: cfg.depth,
        base_channels: cfg.base_channels,
        first_kernel: cfg.first_kernel,
        inner_kernel: cfg.inner_kernel,
        dropout_rate: cfg.dropout,
        seed: cfg.net_seed,
    }
}

pub fn train_config(cfg: &TrainCliConfig) -> TrainConfig {
    TrainConfig {
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        adam_beta1: cfg.adam_beta1,
        adam_beta2: cfg.adam_beta2,
        adam_epsilon: cfg.adam_epsilon,
        shuffle_seed: cfg.shuffle_seed,
    }
}

pub fn run(cfg: &TrainCliConfig) -> Result<()> {
    if cfg.dataset.is_empty() {
        return Err(Error::config("a dataset cache is required (--dataset DIR)"));
    }
    let (manifest, pairs) = load(Path::new(&cfg.dataset))?;

    // every config problem must surface before the first optimizer step
    let net_cfg = network_config(cfg, manifest.resolution);
    net_cfg.validate()?;
    let train_cfg = train_config(cfg);
    train_cfg.validate()?;

    let (train_pairs, _, _) = split_with_counts(
        pairs,
        [manifest.train_count, manifest.validation_count, manifest.test_count],
        manifest.split_seed,
    )?;
    let usable: Vec<_> = train_pairs.into_iter().filter(|p| !p.degenerate).collect();
    if usable.is_empty() {
        return Err(Error::data("training split has no usable (non-degenerate) pairs"));
    }

    let mut params = build(&net_cfg)?;
    let history = ghostforge_core::unet::train::train(&mut params, &usable, &train_cfg)?;

    let out = Path::new(&cfg.out);
    std::fs::create_dir_all(out)?;
    save_params(&params, &out.join("checkpoint.ckpt"))?;
    let mut csv = String::from("step,loss\n");
    for (i, loss) in history.iter().enumerate() {
        writeln!(csv, "{},{}", i + 1, loss).expect("writing to a String cannot fail");
    }
    write_atomic(&out.join("loss.csv"), csv.as_bytes())?;
    config::write_manifest(out, "train", cfg)?;
    println!(
        "trained {} steps on {} pairs, loss {} -> {}, checkpoint in {}",
        history.len(),
        usable.len(),
        history.first().unwrap_or(&f64::NAN),
        history.last().unwrap_or(&f64::NAN),
        out.display()
    );
    Ok(())
}
