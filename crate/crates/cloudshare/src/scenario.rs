//! Scenario files (TOML) and the `key=value` configuration overlay.
//!
//! Overlay lines name a dotted path into the scenario, usually
//! `<section>.<key>`, e.g. `priority.algorithm = "fairtree"` or
//! `dispatch.recalc_period = 30`. Values are read as TOML values; anything
//! that does not parse as one is taken as a bare string. Blank lines and
//! lines starting with `#` are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use cloudshare_core::sim::Scenario;
use toml::{Table, Value};

/// Environment variable naming the overlay file when `--config` is absent.
pub const CONFIG_ENV: &str = "CLOUDSHARE_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Syntax { path: PathBuf, message: String },
    #[error("{}: {field}: {message}", path.display())]
    Invalid { path: PathBuf, field: String, message: String },
}

impl LoadError {
    /// True for problems with the document's content rather than reading it.
    pub fn is_validation(&self) -> bool {
        !matches!(self, LoadError::Io { .. })
    }
}

fn read(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.into(), source })
}

/// Parses overlay text into `(dotted key, value)` pairs.
pub fn parse_overlay(text: &str) -> Result<Vec<(String, Value)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, raw) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(format!("line {}: bad key `{key}`", n + 1));
        }
        let raw = raw.trim();
        let value = toml::from_str::<Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        out.push((key.to_string(), value));
    }
    Ok(out)
}

/// Sets each dotted key in `table`, creating intermediate tables.
pub fn apply_overlay(table: &mut Table, overlay: &[(String, Value)]) -> Result<(), String> {
    for (key, value) in overlay {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("split yields one part");
        let mut t = &mut *table;
        for p in parts {
            let entry = t.entry(p).or_insert_with(|| Value::Table(Table::new()));
            t = entry.as_table_mut().ok_or_else(|| format!("`{key}`: `{p}` is not a table"))?;
        }
        t.insert(last.to_string(), value.clone());
    }
    Ok(())
}

/// Deserializes and validates a scenario from TOML text. `origin` is only
/// used in messages.
pub fn parse_scenario(text: &str, overlay: &[(String, Value)], origin: &Path) -> Result<Scenario, LoadError> {
    let mut table: Table =
        toml::from_str(text).map_err(|e| LoadError::Syntax { path: origin.into(), message: e.to_string() })?;
    apply_overlay(&mut table, overlay)
        .map_err(|message| LoadError::Syntax { path: origin.into(), message })?;
    let scenario: Scenario = serde_path_to_error::deserialize(table).map_err(|e| LoadError::Invalid {
        path: origin.into(),
        field: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    scenario.validate().map_err(|e| LoadError::Invalid { path: origin.into(), field: e.path, message: e.message })?;
    Ok(scenario)
}

/// Overlay file to use: the explicit one, else `$CLOUDSHARE_CONFIG`.
pub fn overlay_path(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

/// Loads a scenario file with an optional overlay file applied on top.
pub fn load_scenario(path: &Path, overlay: Option<&Path>) -> Result<Scenario, LoadError> {
    let pairs = match overlay {
        Some(p) => parse_overlay(&read(p)?).map_err(|message| LoadError::Syntax { path: p.into(), message })?,
        None => Vec::new(),
    };
    parse_scenario(&read(path)?, &pairs, path)
}
