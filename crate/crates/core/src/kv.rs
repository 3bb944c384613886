//! Plain `key=value` files with dotted keys.
//!
//! One entry per line; blank lines and lines starting with `#` are ignored.
//! Keys may repeat only through [`KvFile::set`], which is how command-line
//! overrides are layered on top of a file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    origin: String,
    used: bool,
}

#[derive(Debug, Clone, Default)]
pub struct KvFile {
    source: Option<PathBuf>,
    entries: BTreeMap<String, Entry>,
}

impl KvFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, Some(path))
    }

    pub fn parse(text: &str, source: Option<&Path>) -> Result<Self> {
        let label = source.map_or_else(|| PathBuf::from("<inline>"), Path::to_path_buf);
        let mut kv = KvFile {
            source: source.map(Path::to_path_buf),
            entries: BTreeMap::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: label,
                    line: i + 1,
                    message: format!("expected key=value, got {line:?}"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: label,
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            if kv.entries.contains_key(key) {
                return Err(Error::Parse {
                    path: label,
                    line: i + 1,
                    message: format!("duplicate key {key:?}"),
                });
            }
            kv.entries.insert(
                key.to_string(),
                Entry {
                    value: value.trim().to_string(),
                    origin: format!("{}:{}", label.display(), i + 1),
                    used: false,
                },
            );
        }
        Ok(kv)
    }

    /// Parses and applies a `key=value` override, replacing any existing value.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
        self.set(key.trim(), value.trim());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                origin: "override".into(),
                used: false,
            },
        );
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            e.value.clone()
        })
    }

    pub fn get<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(entry) = self.entries.get_mut(key) else {
            return Ok(None);
        };
        entry.used = true;
        entry
            .value
            .parse()
            .map(Some)
            .map_err(|e| Error::config(format!("{key} ({}): {e}: {:?}", entry.origin, entry.value)))
    }

    pub fn get_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T>(&mut self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::config(format!("missing required key {key:?}")))
    }

    /// Comma-separated list.
    pub fn get_list<T>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.raw(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| Error::config(format!("{key}: {e}: {s:?}"))))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Fails on the first key never read through an accessor.
    pub fn reject_unused(&self) -> Result<()> {
        match self.entries.iter().find(|(_, e)| !e.used) {
            Some((k, e)) => Err(Error::config(format!("unknown key {k:?} ({})", e.origin))),
            None => Ok(()),
        }
    }
}

/// Renders sorted `key=value` lines.
pub fn render<K: AsRef<str>, V: Display>(pairs: impl IntoIterator<Item = (K, V)>) -> String {
    let mut lines: Vec<String> = pairs.into_iter().map(|(k, v)| format!("{}={v}", k.as_ref())).collect();
    lines.sort();
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_types() {
        let mut kv = KvFile::parse(
            "# run\nseed = 7\nrpn.epsilon=0.3\n\nmodel.kernel_sizes=10, 20,30\n",
            None,
        )
        .unwrap();
        assert_eq!(kv.require::<u64>("seed").unwrap(), 7);
        assert_eq!(kv.get::<f64>("rpn.epsilon").unwrap(), Some(0.3));
        assert_eq!(
            kv.get_list::<usize>("model.kernel_sizes").unwrap(),
            Some(vec![10, 20, 30])
        );
        assert_eq!(kv.get_or("lr", 0.5).unwrap(), 0.5);
        kv.reject_unused().unwrap();
    }

    #[test]
    fn unknown_key_reported() {
        let mut kv = KvFile::parse("seed=1\nbogus=2\n", None).unwrap();
        kv.require::<u64>("seed").unwrap();
        let err = kv.reject_unused().unwrap_err().to_string();
        assert!(err.contains("bogus") && err.contains(":2"), "{err}");
    }

    #[test]
    fn malformed_lines_located() {
        let err = KvFile::parse("seed=1\nnonsense\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(matches!(
            KvFile::parse("a=1\na=2\n", None),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn overrides_replace() {
        let mut kv = KvFile::parse("seed=1\n", None).unwrap();
        kv.apply_override("seed=9").unwrap();
        kv.apply_override("rpn.steps=3").unwrap();
        assert_eq!(kv.require::<u64>("seed").unwrap(), 9);
        assert_eq!(kv.require::<usize>("rpn.steps").unwrap(), 3);
        assert!(kv.apply_override("noequals").is_err());
    }

    #[test]
    fn bad_value_is_config_error() {
        let mut kv = KvFile::parse("seed=abc\n", None).unwrap();
        assert!(matches!(kv.require::<u64>("seed"), Err(Error::Config(_))));
        assert!(matches!(kv.require::<u64>("missing"), Err(Error::Config(_))));
    }
}
