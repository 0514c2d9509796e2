//! Flat `key = value` configuration with dotted section keys.
//!
//! Values resolve from built-in defaults, then a config file, then command
//! line overrides; later layers win. Keys absent from the defaults are
//! rejected so typos surface as usage errors.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(CliError::Usage(format!("config line {}: bad key {k:?}", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Parses a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {s:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl Config {
    /// Resolves `defaults ← file ← cli`.
    pub fn resolve(
        defaults: &[(&str, &str)],
        file: Option<&Path>,
        cli: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut layer = |entries: Vec<(String, String)>, origin: &str| -> Result<(), CliError> {
            for (k, v) in entries {
                match values.get_mut(&k) {
                    Some(slot) => *slot = v,
                    None => return Err(CliError::Usage(format!("unknown config key {k} in {origin}"))),
                }
            }
            Ok(())
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            layer(parse_text(&text)?.into_iter().collect(), "config file")?;
        }
        layer(cli.to_vec(), "command line")?;
        Ok(Self { values })
    }

    pub fn from_map(values: BTreeMap<String, String>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("config key {key} has no default"))
    }

    /// `None` for an empty value.
    pub fn opt(&self, key: &str) -> Option<&str> {
        Some(self.str(key)).filter(|s| !s.is_empty())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.str(key);
        v.parse()
            .map_err(|_| CliError::Usage(format!("config key {key}: cannot parse {v:?}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Usage(format!("config key {key}: cannot parse {s:?}")))
            })
            .collect()
    }

    pub fn required(&self, key: &str) -> Result<&str, CliError> {
        self.opt(key)
            .ok_or_else(|| CliError::Usage(format!("config key {key} is required")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_format() {
        let m = parse_text("# c\n a.b = 1 \n\nx=hello world\n").unwrap();
        assert_eq!(m["a.b"], "1");
        assert_eq!(m["x"], "hello world");
        assert!(parse_text("novalue\n").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = Config::resolve(&[("a", "1")], None, &[("b".into(), "2".into())]);
        assert!(matches!(err, Err(CliError::Usage(_))));
    }

    #[test]
    fn lists_and_options() {
        let c = Config::resolve(&[("l", "1, 2,3"), ("e", "")], None, &[]).unwrap();
        assert_eq!(c.list::<usize>("l").unwrap(), vec![1, 2, 3]);
        assert_eq!(c.opt("e"), None);
        assert!(c.required("e").is_err());
    }
}
