//! On-disk artifact layout: `<out>/<config_hash>/<seed>/...`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fedexcise::experiment::{ExperimentConfig, Method};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

pub struct Layout {
    pub root: PathBuf,
    pub hash: String,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let hash = cfg.hash();
        Layout { root: Path::new(&cfg.output_dir).join(&hash), hash }
    }

    pub fn config_file(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(seed.to_string())
    }

    pub fn w_n(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("w_n")
    }

    pub fn history(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("history")
    }

    pub fn ledger(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("ledger.json")
    }

    pub fn manifest(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("dataset.json")
    }

    pub fn method_dir(&self, seed: u64, method: Method) -> PathBuf {
        self.seed_dir(seed).join("unlearn").join(method.name())
    }

    pub fn report(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("report.json")
    }

    pub fn seed_summary(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("summary.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.csv")
    }

    pub fn aggregate(&self) -> PathBuf {
        self.root.join("aggregate.csv")
    }

    pub fn sweep_dir(&self, axis: &str) -> PathBuf {
        self.root.join("sweep").join(axis)
    }

    /// Record the hashed config, or check that the one on disk matches.
    pub fn claim(&self, cfg: &ExperimentConfig) -> Result<()> {
        let canonical = hashed_view(cfg)?;
        let path = self.config_file();
        if path.exists() {
            let stored: serde_json::Value = read_json(&path)?;
            if stored != canonical {
                return Err(CliError::Usage(format!(
                    "{} holds a different configuration with the same hash {}",
                    path.display(),
                    self.hash
                ))
                .into());
            }
            return Ok(());
        }
        write_json(&path, &canonical)
    }
}

fn hashed_view(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(cfg)?;
    if let Some(m) = v.as_object_mut() {
        m.remove("seeds");
        m.remove("methods");
        m.remove("output_dir");
    }
    Ok(v)
}

/// Fail unless `path` exists, naming the command that produces it.
pub fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("missing {}; run `fedexcise {producer}` first", path.display())).into())
    }
}

/// Fail if `path` exists and `force` is not set.
pub fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        Err(CliError::Usage(format!("{} already exists; pass --force to overwrite", path.display())).into())
    } else {
        Ok(())
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
