//! Flat key-value config files and their overlay with command-line flags.
//!
//! Grammar: one `key = value` pair per line; keys mirror the long flag
//! names (without the leading dashes); blank lines and lines starting with
//! `#` are ignored. Flags always override config values; both are recorded
//! verbatim in every report envelope.

use garding::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Default, Clone)]
pub struct Overlay {
    pub text: Option<String>,
    map: BTreeMap<String, String>,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!(
                    "config line {} is not `key = value`: `{line}`",
                    lineno + 1
                ))
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self {
            text: Some(text),
            map,
        })
    }

    fn lookup<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                Error::Parse(format!("config key `{key}` has bad value `{raw}`: {e}"))
            }),
        }
    }

    /// Effective value: flag wins, then config, then the default.
    pub fn eff<T: FromStr + Clone>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(flag.or(self.lookup(key)?).unwrap_or(default))
    }

    /// Effective optional value (no default).
    pub fn eff_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.lookup(key)?,
        })
    }

    /// Effective boolean switch: a bare flag wins; config accepts
    /// true/false.
    pub fn eff_switch(&self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        Ok(self.lookup::<bool>(key)?.unwrap_or(false))
    }
}
