//! `key = value` config files. Flags given on the command line win;
//! anything left at its default can be overridden by the file.

use std::collections::HashMap;
use std::path::Path;

use clap::parser::{ArgMatches, ValueSource};

pub struct ConfigMap {
    values: HashMap<String, String>,
}

impl ConfigMap {
    pub fn empty() -> Self {
        Self {
            values: HashMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut values = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!(
                    "config line {} is not `key = value`: {raw}",
                    idx + 1
                ));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Override `field` with the config value for `key` unless the flag was
/// given explicitly on the command line.
pub fn merge<T: std::str::FromStr>(
    field: &mut T,
    matches: &ArgMatches,
    cfg: &ConfigMap,
    key: &str,
) -> Result<(), String>
where
    T::Err: std::fmt::Display,
{
    if matches!(matches.value_source(key), Some(ValueSource::CommandLine)) {
        return Ok(());
    }
    if let Some(raw) = cfg.get(key) {
        *field = raw
            .parse()
            .map_err(|e| format!("config key `{key}`: {e}"))?;
    }
    Ok(())
}

/// Same for optional flags.
pub fn merge_opt<T: std::str::FromStr>(
    field: &mut Option<T>,
    matches: &ArgMatches,
    cfg: &ConfigMap,
    key: &str,
) -> Result<(), String>
where
    T::Err: std::fmt::Display,
{
    if matches!(matches.value_source(key), Some(ValueSource::CommandLine)) {
        return Ok(());
    }
    if let Some(raw) = cfg.get(key) {
        *field = Some(
            raw.parse()
                .map_err(|e| format!("config key `{key}`: {e}"))?,
        );
    }
    Ok(())
}
