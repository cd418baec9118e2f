//! Loading an [`ExperimentConfig`] from TOML plus environment overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use fedexcise::experiment::ExperimentConfig;

/// Environment variables with this prefix override config keys. Nested
/// keys are separated by a double underscore, so `FEDEXCISE_PLAN__DELTA=0.3`
/// sets `plan.delta`.
pub const ENV_PREFIX: &str = "FEDEXCISE_";

/// Read `path` (or start from defaults), apply overrides from `env`, and
/// validate.
pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<ExperimentConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            text.parse::<toml::Table>().with_context(|| format!("parsing config {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for (key, value) in env {
        if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
            let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
            set_path(&mut doc, &path, parse_value(&value)).with_context(|| format!("applying {key}"))?;
        }
    }
    let cfg: ExperimentConfig = toml::Value::Table(doc).try_into().context("invalid configuration")?;
    Ok(cfg)
}

/// A TOML literal when `raw` parses as one, otherwise a plain string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = match path.split_last() {
        Some(x) => x,
        None => bail!("empty override key"),
    };
    if last.is_empty() || parents.iter().any(|p| p.is_empty()) {
        bail!("malformed override key");
    }
    let mut table = doc;
    for p in parents {
        let entry = table.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("'{p}' is not a table"),
        };
    }
    table.insert(last.clone(), value);
    Ok(())
}
