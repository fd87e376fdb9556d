//! Config resolution and run manifests.
//!
//! Each subcommand owns a serde config struct with complete defaults. A
//! `--config` file overlays those defaults and explicit flags overlay the
//! file. A previous run's manifest is accepted wherever a config file is;
//! its embedded `config` object is used, so `--config run-manifest.json`
//! replays a run.

use std::fs;
use std::path::Path;

use ghostforge_core::dataset::write_atomic;
use ghostforge_core::{Error, Result};
use serde::{de::DeserializeOwned, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    if value.get("command").is_some() {
        if let Some(inner) = value.get_mut("config") {
            let inner = inner.take();
            value = inner;
        }
    }
    serde_json::from_value(value).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a T,
}

/// Write `<out_dir>/run-manifest.json` describing the resolved run.
pub fn write_manifest<T: Serialize>(out_dir: &Path, command: &str, cfg: &T) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let manifest = Manifest {
        command,
        version: VERSION,
        config: cfg,
    };
    let mut text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::data(e.to_string()))?;
    text.push('\n');
    write_atomic(&out_dir.join("run-manifest.json"), text.as_bytes())
}
