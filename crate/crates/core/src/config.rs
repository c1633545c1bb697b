//! Flat `key=value` run configuration.
//!
//! The format is a single level of `key=value` lines: no sections, no
//! nesting, `#` and `;` start comments. Keys are validated against the
//! dispatching subcommand's allow-list so typos fail loudly instead of
//! silently running with defaults.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find(['#', ';']) {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "config line {}: expected key=value, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
            {
                return Err(Error::Config(format!(
                    "config line {}: keys are lowercase [a-z0-9_], got `{key}`",
                    lineno + 1
                )));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!(
                    "config line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(ConfigMap { entries })
    }

    /// Reject keys outside the subcommand's documented set.
    pub fn allow_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "unknown config key `{key}` (allowed: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config(format!("missing required config key `{key}`")))
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        self.entries
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string())
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("config key `{key}`: {e}"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        self.get_opt_usize(key).map(|v| v.unwrap_or(default))
    }

    /// Distinguishes an absent key from any value (for keys whose absence
    /// means "use the fixture's own default").
    pub fn get_opt_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|e| Error::Config(format!("config key `{key}`: {e}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_pairs_with_comments() {
        let cfg = ConfigMap::parse(
            "# run setup\nfixture = reciprocal_shift\n r=0.2  ; margin\n\ngrid=8\n",
        )
        .unwrap();
        assert_eq!(cfg.require("fixture").unwrap(), "reciprocal_shift");
        assert_eq!(cfg.get_f64("r", 0.5).unwrap(), 0.2);
        assert_eq!(cfg.get_usize("grid", 4).unwrap(), 8);
        assert_eq!(cfg.get_usize("missing", 4).unwrap(), 4);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(ConfigMap::parse("just a line").is_err());
        assert!(ConfigMap::parse("A=1").is_err(), "uppercase key");
        assert!(ConfigMap::parse("a=1\na=2").is_err(), "duplicate key");
    }

    #[test]
    fn rejects_unknown_keys() {
        let cfg = ConfigMap::parse("fixture=x\ntypo_key=1").unwrap();
        assert!(cfg.allow_keys(&["fixture", "r"]).is_err());
        assert!(cfg.allow_keys(&["fixture", "typo_key"]).is_ok());
    }

    #[test]
    fn numeric_parse_errors_are_config_errors() {
        let cfg = ConfigMap::parse("r=abc").unwrap();
        assert!(matches!(cfg.get_f64("r", 0.1), Err(Error::Config(_))));
    }
}
