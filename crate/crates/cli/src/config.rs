//! Layered settings: command-line flags override a flat `key = value`
//! file, which overrides built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

/// Keys written into `manifest.txt` that describe a run rather than
/// configure it. They are accepted and ignored so a manifest can be fed back
/// through `--config`.
const METADATA_KEYS: [&str; 3] = ["command", "tool-version", "started-at"];

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// `_` and `-` are interchangeable in keys.
pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "config line {}: expected key = value, got {raw:?}",
                no + 1
            ))
        })?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!(
                "config line {}: empty key",
                no + 1
            )));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("config key {key:?} given twice")));
        }
    }
    Ok(map)
}

#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: Vec<(&'static str, String)>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> CliResult<Self> {
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            resolved: Vec::new(),
        })
    }

    fn raw(&mut self, key: &'static str, flag: Option<&str>, default: &str) -> String {
        let from_file = self.file.remove(key);
        let value = flag
            .map(str::to_string)
            .or(from_file)
            .unwrap_or_else(|| default.to_string());
        self.resolved.push((key, value.clone()));
        value
    }

    pub fn value<T>(&mut self, key: &'static str, flag: Option<&str>, default: &str) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key, flag, default);
        parse_one(key, &raw)
    }

    /// Comma-separated, non-empty list.
    pub fn list<T>(
        &mut self,
        key: &'static str,
        flag: Option<&str>,
        default: &str,
    ) -> CliResult<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.raw(key, flag, default);
        let items = raw
            .split(',')
            .map(|s| parse_one(key, s.trim()))
            .collect::<CliResult<Vec<T>>>()?;
        if items.is_empty() {
            return Err(CliError::Usage(format!("--{key} needs at least one value")));
        }
        Ok(items)
    }

    /// `A:B` with `A < B`.
    pub fn range(
        &mut self,
        key: &'static str,
        flag: Option<&str>,
        default: &str,
    ) -> CliResult<(f64, f64)> {
        let raw = self.raw(key, flag, default);
        let (lo, hi) = raw
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("--{key}: expected A:B, got {raw:?}")))?;
        let lo: f64 = parse_one(key, lo.trim())?;
        let hi: f64 = parse_one(key, hi.trim())?;
        if !(lo < hi) {
            return Err(CliError::Usage(format!("--{key}: need A < B, got {raw:?}")));
        }
        Ok((lo, hi))
    }

    /// Rejects config-file keys the command did not ask for and returns the
    /// resolved settings in the order they were requested.
    pub fn finish(mut self) -> CliResult<Vec<(&'static str, String)>> {
        for key in METADATA_KEYS {
            self.file.remove(key);
        }
        if let Some(key) = self.file.keys().next() {
            return Err(CliError::Usage(format!("unknown config key {key:?}")));
        }
        Ok(self.resolved)
    }
}

fn parse_one<T>(key: &str, raw: &str) -> CliResult<T>
where
    T: FromStr,
    T::Err: Display,
{
    raw.parse()
        .map_err(|e| CliError::Usage(format!("--{key}: cannot parse {raw:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let mut r = Resolver {
            file: parse_config("eta = 0.1\n# comment\nepochs=7\n").unwrap(),
            resolved: Vec::new(),
        };
        let eta: f64 = r.value("eta", Some("0.2"), "0.05").unwrap();
        let epochs: usize = r.value("epochs", None, "200").unwrap();
        let seed: u64 = r.value("seed", None, "1").unwrap();
        assert_eq!((eta, epochs, seed), (0.2, 7, 1));
        assert_eq!(r.finish().unwrap().len(), 3);
    }

    #[test]
    fn underscores_and_hyphens_are_equivalent() {
        let map = parse_config("a_star = -2").unwrap();
        assert_eq!(map.get("a-star").map(String::as_str), Some("-2"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_config("novalue").is_err());
        assert!(parse_config("a=1\na=2").is_err());
        let mut r = Resolver {
            file: parse_config("bogus = 1").unwrap(),
            resolved: Vec::new(),
        };
        assert!(r.value::<f64>("eta", Some("abc"), "0.05").is_err());
        assert!(r.finish().is_err());
    }

    #[test]
    fn manifest_metadata_is_ignored() {
        let r = Resolver {
            file: parse_config("command = odeflow train\nstarted_at = now").unwrap(),
            resolved: Vec::new(),
        };
        assert!(r.finish().unwrap().is_empty());
    }

    #[test]
    fn lists_and_ranges() {
        let mut r = Resolver::default();
        let v: Vec<f64> = r.list("inits", Some("-3, -2,0"), "").unwrap();
        assert_eq!(v, vec![-3.0, -2.0, 0.0]);
        assert_eq!(r.range("range", Some("-3:1"), "").unwrap(), (-3.0, 1.0));
        assert!(r.range("range", Some("1:-3"), "").is_err());
        assert!(r.range("range", Some("1"), "").is_err());
    }
}
