//! Training config resolution: defaults, then the TOML file, then `--set`
//! overrides, then `--seed`.

use std::path::Path;

use anyhow::{anyhow, Context};
use gridflow::train::TrainingConfig;

use crate::error::{CliError, Kind};

/// Parse a `--set` value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::new(Kind::Validation, format!("override `{assignment}` is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::new(Kind::Validation, format!("bad override key `{key}`")));
    }
    let mut table = root;
    for part in &path[..path.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::new(Kind::Validation, format!("override key `{key}`: `{part}` is not a table")))?;
    }
    table.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<TrainingConfig, CliError> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(|e| CliError::new(Kind::BadPath, format!("{e:#}")))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::new(Kind::Validation, format!("config {}: {}", path.display(), e.message())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut config: TrainingConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::new(Kind::Validation, format!("config: {}", e.message())))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate().map_err(|e| CliError::new(Kind::Validation, e.to_string()))?;
    Ok(config)
}

/// The resolved config as TOML, for storing next to run outputs.
pub fn to_toml(config: &TrainingConfig) -> anyhow::Result<String> {
    toml::to_string(config).map_err(|e| anyhow!("serializing config: {e}"))
}
