//! Flat key=value config files and flag/file/default resolution.
//!
//! Keys use the long flag names (e.g. `classifier=gbstumps`, `folds=5`,
//! `E=200`). Command-line flags override file values; file values override
//! built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::parse(format!("cannot read config {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::parse(format!(
                    "config line {}: expected key=value, got '{line}'",
                    idx + 1
                ))
            })?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::parse(format!("config key '{key}': cannot parse '{raw}'"))
            }),
        }
    }
}

/// Tracks resolved settings so reports can echo the full configuration.
#[derive(Debug, Default)]
pub struct Resolved {
    echo: BTreeMap<String, String>,
}

impl Resolved {
    /// flag > config file > default.
    pub fn get<T: FromStr + Display + Clone>(
        &mut self,
        flag: Option<T>,
        cfg: &ConfigFile,
        key: &str,
        default: T,
    ) -> Result<T, CliError> {
        let value = match flag {
            Some(v) => v,
            None => cfg.get::<T>(key)?.unwrap_or(default),
        };
        self.echo.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// flag > config file; an error when absent.
    pub fn require<T: FromStr + Display + Clone>(
        &mut self,
        flag: Option<T>,
        cfg: &ConfigFile,
        key: &str,
    ) -> Result<T, CliError> {
        let value = match flag {
            Some(v) => v,
            None => cfg
                .get::<T>(key)?
                .ok_or_else(|| CliError::parse(format!("--{key} is required")))?,
        };
        self.echo.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Records a derived setting in the echo.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.echo.insert(key.to_string(), value.to_string());
    }

    pub fn into_echo(self) -> BTreeMap<String, String> {
        self.echo
    }
}

/// Parses "0-4", "7", or comma mixes like "0-2,5" into sorted indices.
pub fn parse_feature_list(text: &str) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a
                    .trim()
                    .parse()
                    .map_err(|_| CliError::parse(format!("bad feature range '{part}'")))?;
                let b: usize = b
                    .trim()
                    .parse()
                    .map_err(|_| CliError::parse(format!("bad feature range '{part}'")))?;
                if b < a {
                    return Err(CliError::parse(format!("bad feature range '{part}'")));
                }
                out.extend(a..=b);
            }
            None => out.push(
                part.parse()
                    .map_err(|_| CliError::parse(format!("bad feature index '{part}'")))?,
            ),
        }
    }
    if out.is_empty() {
        return Err(CliError::parse("empty feature list".into()));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
