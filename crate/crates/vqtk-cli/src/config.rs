//! Optional key=value configuration files. Flags always override file
//! values; every resolved value is recorded for the run manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use vqtk_core::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            values.insert(
                key.trim().to_string(),
                value.trim().trim_matches('"').to_string(),
            );
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Resolves one parameter: the flag wins, then the config file, then the
/// default. The chosen value lands in `record`.
pub fn resolve<T>(
    flag: Option<T>,
    settings: &Settings,
    key: &str,
    default: T,
    record: &mut BTreeMap<String, String>,
) -> Result<T>
where
    T: FromStr + Display,
{
    let value = match flag {
        Some(v) => v,
        None => match settings.get(key) {
            Some(raw) => raw.parse().map_err(|_| {
                Error::InvalidConfig(format!("config key {key}: cannot parse {raw:?}"))
            })?,
            None => default,
        },
    };
    record.insert(key.to_string(), value.to_string());
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_with_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "k = 32\n# comment\nema_decay = 0.5\n").unwrap();
        let settings = Settings::load(&path).unwrap();
        let mut record = BTreeMap::new();
        // Flag beats file, file beats default.
        assert_eq!(resolve(Some(8usize), &settings, "k", 4, &mut record).unwrap(), 8);
        assert_eq!(resolve(None::<usize>, &settings, "k", 4, &mut record).unwrap(), 32);
        assert_eq!(resolve(None::<u64>, &settings, "seed", 7, &mut record).unwrap(), 7);
        assert_eq!(record["seed"], "7");
    }

    #[test]
    fn malformed_line_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "just words\n").unwrap();
        assert!(matches!(
            Settings::load(&path),
            Err(Error::InvalidConfig(_))
        ));
    }
}
