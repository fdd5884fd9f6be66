//! Flat `key = value` configuration files with `#` comments.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CoreError::ConfigSyntax {
                line: n + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(CoreError::ConfigSyntax {
                    line: n + 1,
                    message: "empty key".into(),
                });
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(CoreError::ConfigSyntax {
                    line: n + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Typed lookup; `None` when absent, error when present but unparsable.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e: T::Err| CoreError::ConfigValue {
                key: key.into(),
                message: format!("`{v}`: {e}"),
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| CoreError::ConfigValue {
                    key: key.into(),
                    message: format!("`{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Keys not in `known`, for rejecting typos.
    pub fn unknown_keys<'a>(&'a self, known: &[&str]) -> Vec<&'a str> {
        self.keys().filter(|k| !known.contains(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let cfg = KvConfig::parse("# header\nnum_users = 4  # trailing\n\nsweep = 1, 2,3\n").unwrap();
        assert_eq!(cfg.get::<usize>("num_users").unwrap(), Some(4));
        assert_eq!(cfg.get_list::<u32>("sweep").unwrap(), Some(vec![1, 2, 3]));
        assert_eq!(cfg.get::<f64>("missing").unwrap(), None);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            KvConfig::parse("a = 1\nnot a pair\n"),
            Err(CoreError::ConfigSyntax { line: 2, .. })
        ));
        assert!(KvConfig::parse("a = 1\na = 2").is_err());
    }

    #[test]
    fn bad_value_names_the_key() {
        let cfg = KvConfig::parse("num_users = four").unwrap();
        let err = cfg.get::<usize>("num_users").unwrap_err();
        assert!(err.to_string().contains("num_users"));
    }
}
