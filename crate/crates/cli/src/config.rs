//! TOML campaign configs with dotted-path overrides.

use std::fs;
use std::path::{Path, PathBuf};

use moboa_core::campaign::CampaignConfig;
use toml::{Table, Value};

use crate::CliError;

/// Reads and validates a campaign config, applying `key.path=value`
/// overrides, an explicit seed list, and the default seed (used only when
/// the file names no seeds).
pub fn load(
    path: &Path,
    overrides: &[String],
    seeds: Option<&[u64]>,
    default_seed: Option<u64>,
) -> Result<CampaignConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut table: Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let has_seeds = table
        .get("campaign")
        .and_then(Value::as_table)
        .is_some_and(|c| c.contains_key("seeds"));
    let seed_list = match (seeds, default_seed) {
        (Some(s), _) => Some(s.to_vec()),
        (None, Some(s)) if !has_seeds => Some(vec![s]),
        _ => None,
    };
    if let Some(list) = seed_list {
        let campaign = table
            .entry("campaign")
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Usage("campaign must be a table".into()))?;
        let arr = list.iter().map(|&s| Value::Integer(s as i64)).collect();
        campaign.insert("seeds".into(), Value::Array(arr));
    }
    resolve_table_path(&mut table, path);
    // Round-trip through text so errors carry the offending key and line.
    let merged = toml::to_string(&table).map_err(|e| CliError::Usage(e.to_string()))?;
    let config: CampaignConfig = toml::from_str(&merged)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
    config
        .validate()
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
    Ok(config)
}

fn resolve_table_path(table: &mut Table, config_path: &Path) {
    let Some(problem) = table.get_mut("problem").and_then(Value::as_table_mut) else {
        return;
    };
    if let Some(Value::String(p)) = problem.get("path") {
        let p = PathBuf::from(p);
        if p.is_relative() {
            let base = config_path.parent().unwrap_or(Path::new("."));
            let joined = base.join(p);
            problem.insert("path".into(), Value::String(joined.to_string_lossy().into_owned()));
        }
    }
}

/// Parses `a.b.c=value`, where value is any TOML literal or a bare string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{spec}' must look like key.path=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("override '{spec}' has an empty key segment")));
    }
    let value = parse_literal(raw.trim());
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override '{spec}': '{p}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
