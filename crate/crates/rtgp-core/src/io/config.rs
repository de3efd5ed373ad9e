//! Run configuration: UTF-8 `key = value` lines with `#` comments. Keys the
//! run does not recognize are hard errors, so a typo cannot silently fall
//! back to a default.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
    used: Cell<bool>,
}

/// A parsed configuration. Lookups mark keys as consumed;
/// [`Config::ensure_consumed`] then rejects anything left over.
#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            // A `#` starts a comment anywhere on the line.
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(config_err(format!("line {line}: expected `key = value`, got `{content}`")));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(config_err(format!("line {line}: missing key before `=`")));
            }
            if value.is_empty() {
                return Err(config_err(format!("line {line}: key `{key}` has an empty value")));
            }
            if let Some(prev) = entries.insert(
                key.to_string(),
                Entry { value: value.to_string(), line, used: Cell::new(false) },
            ) {
                let Entry { line: first, .. } = prev;
                return Err(config_err(format!(
                    "line {line}: duplicate key `{key}` (first set on line {first})"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::InvalidData {
                config_err(format!("{}: configuration must be UTF-8", path.display()))
            } else {
                Error::Io(e)
            }
        })?;
        Self::parse(&text)
    }

    /// Raw string lookup; marks the key consumed.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| {
            e.used.set(true);
            e.value.as_str()
        })
    }

    /// Typed lookup; `None` when the key is absent.
    pub fn get_parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => {
                e.used.set(true);
                e.value.parse::<T>().map(Some).map_err(|err| {
                    config_err(format!(
                        "line {}: key `{key}`: cannot parse `{}`: {err}",
                        e.line, e.value
                    ))
                })
            }
        }
    }

    /// Errors on any key no lookup ever touched.
    pub fn ensure_consumed(&self) -> Result<()> {
        let unknown: Vec<String> = self
            .entries
            .iter()
            .filter(|(_, e)| !e.used.get())
            .map(|(k, e)| format!("`{k}` (line {})", e.line))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(config_err(format!("unknown keys: {}", unknown.join(", "))))
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_comments_and_blanks() {
        let cfg = Config::parse(
            "# run settings\n\
             seed = 7\n\
             \n\
             engine = vi   # variational\n\
             phi = 8.5\n",
        )
        .unwrap();
        assert_eq!(cfg.get_parsed::<u64>("seed").unwrap(), Some(7));
        assert_eq!(cfg.get("engine"), Some("vi"));
        assert_eq!(cfg.get_parsed::<f64>("phi").unwrap(), Some(8.5));
        assert_eq!(cfg.get_parsed::<usize>("absent").unwrap(), None);
        cfg.ensure_consumed().unwrap();
    }

    #[test]
    fn unconsumed_keys_are_hard_errors() {
        let cfg = Config::parse("seed = 1\nspeed = 2\n").unwrap();
        let _ = cfg.get("seed");
        let err = cfg.ensure_consumed().unwrap_err();
        assert!(err.to_string().contains("speed"), "{err}");
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn malformed_lines_report_their_number() {
        for (text, needle) in [
            ("just-some-words\n", "line 1"),
            ("a = 1\n= 2\n", "line 2"),
            ("a = 1\nb =\n", "empty value"),
            ("a = 1\na = 2\n", "duplicate"),
        ] {
            let err = Config::parse(text).unwrap_err();
            assert!(err.to_string().contains(needle), "{text:?}: {err}");
        }
    }

    #[test]
    fn typed_parse_failures_name_the_key() {
        let cfg = Config::parse("reps = ten\n").unwrap();
        let err = cfg.get_parsed::<usize>("reps").unwrap_err();
        assert!(err.to_string().contains("reps"), "{err}");
        assert!(matches!(err, Error::Config(_)));
    }
}
