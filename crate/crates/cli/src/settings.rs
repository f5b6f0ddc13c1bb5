//! Flag and config-file merging. Config files are flat `key=value` lines;
//! `#` starts a comment. Flags override file keys.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// A usage problem tied to one key.
#[derive(Debug)]
pub struct UsageError {
    pub key: String,
    pub message: String,
}

impl UsageError {
    pub fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid value for '{}': {}", self.key, self.message)
    }
}

pub struct Settings {
    values: BTreeMap<String, String>,
}

pub fn parse_config_file(path: &Path, allowed: &[&str]) -> Result<BTreeMap<String, String>, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError::new("config", format!("cannot read {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError::new("config", format!("line {} is not key=value", i + 1)))?;
        let key = key.trim();
        if !allowed.contains(&key) {
            return Err(UsageError::new(key, "unknown config key"));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    /// Merge flag values over the optional config file.
    pub fn resolve(
        flags: Vec<(&'static str, Option<String>)>,
        config: Option<&Path>,
    ) -> Result<Self, UsageError> {
        let allowed: Vec<&str> = flags.iter().map(|(k, _)| *k).collect();
        let mut values = match config {
            Some(path) => parse_config_file(path, &allowed)?,
            None => BTreeMap::new(),
        };
        for (key, value) in flags {
            if let Some(v) = value {
                values.insert(key.to_string(), v);
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn string(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn required(&self, key: &str) -> Result<String, UsageError> {
        self.raw(key)
            .map(str::to_string)
            .ok_or_else(|| UsageError::new(key, "required"))
    }

    pub fn parse<T: FromStr>(&self, key: &str, default: T) -> Result<T, UsageError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| UsageError::new(key, format!("'{v}': {e}"))),
        }
    }

    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse().map_err(|e| UsageError::new(key, format!("'{v}': {e}"))))
            .transpose()
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str, default: &str) -> Result<Vec<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key).unwrap_or(default);
        let items: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(UsageError::new(key, "empty list"));
        }
        items
            .into_iter()
            .map(|v| v.parse().map_err(|e| UsageError::new(key, format!("'{v}': {e}"))))
            .collect()
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool, UsageError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(UsageError::new(key, format!("'{v}' is not a boolean"))),
        }
    }

    /// Every resolved key, for the manifest.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# study\nreps = 20\npi=0.25\n").unwrap();
        let s = Settings::resolve(
            vec![("reps", Some("5".into())), ("pi", None), ("seed", None)],
            Some(&path),
        )
        .unwrap();
        assert_eq!(s.parse::<usize>("reps", 1).unwrap(), 5);
        assert_eq!(s.list::<f64>("pi", "1").unwrap(), vec![0.25]);
        assert_eq!(s.parse::<u64>("seed", 9).unwrap(), 9);
    }

    #[test]
    fn unknown_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "bogus=1\n").unwrap();
        let err = Settings::resolve(vec![("reps", None)], Some(&path)).err().unwrap();
        assert_eq!(err.key, "bogus");
    }

    #[test]
    fn bad_number_is_named() {
        let s = Settings::resolve(vec![("pi", Some("x".into()))], None).unwrap();
        assert_eq!(s.list::<f64>("pi", "1").unwrap_err().key, "pi");
    }
}
