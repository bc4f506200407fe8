//! Loading scenario files and applying command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ipwave::scenario::{EpsGrid, ScenarioConfig};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// A problem with the configuration rather than with the computation.
#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub eps: Option<f64>,
    pub eps_grid: Option<String>,
    pub set: Vec<String>,
}

/// Reads a TOML file, or JSON when the extension is `.json`.
pub fn read_tree(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
    let tree: Value = if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        // reports embed the config under `config`
        match v.get("config") {
            Some(inner) if v.get("config_hash").is_some() => inner.clone(),
            _ => v,
        }
    } else {
        toml::from_str(&text)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?
    };
    if !tree.is_object() {
        return Err(ConfigError::new("--config", "top level must be a table").into());
    }
    Ok(tree)
}

fn parse_value(raw: &str) -> Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<Map<String, Value>>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or(Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value`; the value is read as TOML, falling back to a string.
pub fn apply_set(tree: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::new("--set", format!("`{assignment}` is not key=value")))?;
    let path = path.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(ConfigError::new("--set", format!("bad key `{path}`")).into());
    }
    let mut node = tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::new(path, format!("`{part}` is not inside a table")))?;
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), parse_value(raw.trim()));
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("non-empty path")
}

/// Reads the file, applies overrides and checks the result.
pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<ScenarioConfig> {
    let mut tree = match path {
        Some(p) => read_tree(p)?,
        None => return Err(ConfigError::new("--config", "no scenario file given").into()),
    };
    for s in &ov.set {
        apply_set(&mut tree, s)?;
    }
    let mut cfg: ScenarioConfig = serde_json::from_value(tree)
        .map_err(|e| ConfigError::new(field_of(&e.to_string()), e.to_string()))?;
    if let Some(out) = &ov.out {
        cfg.output = out.display().to_string();
    }
    if ov.eps.is_some() || ov.eps_grid.is_some() {
        cfg.eps = ov.eps;
        cfg.eps_grid = ov.eps_grid.clone().map(EpsGrid::Range);
    }
    cfg.resolve().map_err(core_config_error)?;
    Ok(cfg)
}

fn field_of(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

pub fn core_config_error(e: ipwave::Error) -> anyhow::Error {
    match e {
        ipwave::Error::Config { key, message } => ConfigError::new(key, message).into(),
        other => ConfigError::new("config", other.to_string()).into(),
    }
}

/// The config as embedded in reports: everything except the output location.
pub fn embedded(cfg: &ScenarioConfig) -> Result<Value> {
    let mut v = serde_json::to_value(cfg).context("serializing config")?;
    if let Some(o) = v.as_object_mut() {
        o.remove("output");
    }
    Ok(v)
}

pub fn config_hash(cfg: &ScenarioConfig) -> Result<String> {
    let text = serde_json::to_string(&embedded(cfg)?)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}
