//! Flat `key = value` text: the one format used for config files, dataset
//! manifests, and the checkpoint config record. UTF-8, `#` starts a comment,
//! blank lines ignored, order preserved.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: Vec<(String, String)>,
}

impl ConfigMap {
    pub fn new() -> Self {
        ConfigMap::default()
    }

    pub fn parse(text: &str) -> Result<ConfigMap> {
        let mut map = ConfigMap::new();
        for (number, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::param(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    number + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::param(format!("line {}: empty key", number + 1)));
            }
            if map.get(key).is_some() {
                return Err(Error::param(format!(
                    "line {}: duplicate key '{key}'",
                    number + 1
                )));
            }
            map.entries.push((key.to_string(), value.to_string()));
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<ConfigMap> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Typed lookup; a present-but-unparseable value is an error naming the
    /// key, a missing key is `None`.
    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::param(format!("config key '{key}': cannot parse '{raw}'"))
            }),
        }
    }

    /// Appends or overwrites in place, keeping first-insertion order.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_spacing() {
        let text = "# run settings\nmode = sam\n\nlr=0.001   # inline note\n  epochs =  60\n";
        let map = ConfigMap::parse(text).unwrap();
        assert_eq!(map.get("mode"), Some("sam"));
        assert_eq!(map.get("lr"), Some("0.001"));
        assert_eq!(map.get("epochs"), Some("60"));
        assert_eq!(map.get("missing"), None);
        assert_eq!(map.keys().collect::<Vec<_>>(), vec!["mode", "lr", "epochs"]);
    }

    #[test]
    fn round_trips_through_text() {
        let mut map = ConfigMap::new();
        map.set("seed", 7);
        map.set("rho", 0.95);
        map.set("seed", 9); // overwrite keeps position
        let text = map.to_text();
        assert_eq!(text, "seed = 9\nrho = 0.95\n");
        assert_eq!(ConfigMap::parse(&text).unwrap(), map);
    }

    #[test]
    fn typed_lookup_reports_the_bad_key() {
        let map = ConfigMap::parse("k = sixteen\n").unwrap();
        assert_eq!(map.get_parsed::<f64>("absent").unwrap(), None);
        let err = map.get_parsed::<usize>("k").unwrap_err().to_string();
        assert!(err.contains("'k'") && err.contains("sixteen"), "{err}");
    }

    #[test]
    fn malformed_lines_are_rejected_with_line_numbers() {
        let err = ConfigMap::parse("mode = sam\njust words\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = ConfigMap::parse("= value\n").unwrap_err().to_string();
        assert!(err.contains("empty key"), "{err}");
        let err = ConfigMap::parse("a = 1\na = 2\n").unwrap_err().to_string();
        assert!(err.contains("duplicate") && err.contains("'a'"), "{err}");
    }

    #[test]
    fn load_names_the_file_on_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("settings.txt");
        std::fs::write(&path, "broken line\n").unwrap();
        let err = ConfigMap::load(&path).unwrap_err().to_string();
        assert!(err.contains("settings.txt"), "{err}");
        let err = ConfigMap::load(&dir.path().join("nope.txt")).unwrap_err().to_string();
        assert!(err.contains("nope.txt"), "{err}");
    }
}
