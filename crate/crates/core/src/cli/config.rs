//! Flat `key = value` config files and flag/config/default resolution.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::CliError;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn parse_config_text(text: &str) -> Result<HashMap<String, String>, CliError> {
    let mut out = HashMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
        let key = k.trim().replace('_', "-");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("config key '{key}' given twice")));
        }
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<HashMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Lib(crate::Error::io(path, e)))?;
    parse_config_text(&text)
}

/// Resolves each setting as flag, then config file, then default, and
/// records the chosen value in canonical text form.
pub struct Resolver {
    config: HashMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(config: HashMap<String, String>) -> Self {
        Resolver {
            config,
            resolved: BTreeMap::new(),
        }
    }

    fn pick(&mut self, key: &str, flag: Option<String>, default: &str) -> String {
        let from_config = self.config.remove(key);
        let v = flag.or(from_config).unwrap_or_else(|| default.to_string());
        self.resolved.insert(key.to_string(), v.clone());
        v
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let text = self.pick(key, flag.map(|f| f.to_string()), &default.to_string());
        text.parse()
            .map_err(|e| CliError::Usage(format!("--{key}: cannot parse '{text}': {e}")))
    }

    /// Comma-separated list.
    pub fn list<T>(&mut self, key: &str, flag: Option<String>, default: &str) -> Result<Vec<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let text = self.pick(key, flag, default);
        text.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Usage(format!("--{key}: cannot parse '{s}': {e}")))
            })
            .collect()
    }

    pub fn string(&mut self, key: &str, flag: Option<String>, default: &str) -> String {
        self.pick(key, flag, default)
    }

    /// Canonical `key=value` lines (sorted) and their hash. Fails if the
    /// config file carried keys the command does not know.
    pub fn finish(self, command: &str) -> Result<(BTreeMap<String, String>, u64), CliError> {
        if let Some(k) = self.config.keys().min() {
            return Err(CliError::Usage(format!("config key '{k}' is not used by '{command}'")));
        }
        let mut text = format!("command={command}\n");
        for (k, v) in &self.resolved {
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        Ok((self.resolved, fnv1a64(text.as_bytes())))
    }
}
