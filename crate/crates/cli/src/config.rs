//! Flat `key = value` config files and flag/file/default resolution.
//!
//! Precedence is: command-line flag, then config file, then built-in
//! default. Files are UTF-8 text, one assignment per line; blank lines
//! and lines starting with `#` are ignored. Unknown keys are rejected so
//! a typo fails loudly instead of silently using a default.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use brme::{Error, Result};

/// Every key any subcommand understands. One shared set (rather than one
/// per command) lets a single file serve several commands.
const KNOWN_KEYS: &[&str] = &[
    // shared
    "seed",
    "data",
    "out",
    // training
    "loss",
    "bins",
    "layer_sizes",
    "activation",
    "classes_per_batch",
    "samples_per_class",
    "lr",
    "gamma",
    "decay_every",
    "max_epochs",
    "patience",
    "val_fraction",
    "ce_weight",
    "contrastive_margin",
    "triplet_margin",
    "lifted_margin",
    "crop_fraction",
    // data generation
    "classes",
    "per_class",
    "dim",
    "sigma",
    "format",
    "side",
    // sweeps
    "sweep_bins",
    "losses",
    // evaluation
    "checkpoint",
    "split",
];

/// Parsed key/value pairs from one config file (or none).
pub struct FileConfig {
    values: HashMap<String, String>,
    path: String,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig {
            values: HashMap::new(),
            path: String::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut values = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "{}:{}: expected `key = value`, got {line:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "{}:{}: unknown config key {key:?}",
                    path.display(),
                    lineno + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(FileConfig {
            values,
            path: path.display().to_string(),
        })
    }

    /// Loads `path` when given, otherwise an empty config.
    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::empty()),
        }
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        <T as FromStr>::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                Error::InvalidConfig(format!("{}: key {key} = {raw:?}: {e}", self.path))
            }),
        }
    }
}

/// Flag beats file beats default.
pub fn resolve<T>(flag: Option<T>, file: &FileConfig, key: &str, default: T) -> Result<T>
where
    T: FromStr,
    <T as FromStr>::Err: fmt::Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.get(key)?.unwrap_or(default)),
    }
}

/// Like [`resolve`] but without a default; `None` means the caller must
/// decide (usually: required, error out).
pub fn resolve_opt<T>(flag: Option<T>, file: &FileConfig, key: &str) -> Result<Option<T>>
where
    T: FromStr,
    <T as FromStr>::Err: fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}

/// Parses a comma-separated list of integers, e.g. layer sizes "16,32,16".
pub fn parse_usize_list(raw: &str, what: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|e| Error::InvalidConfig(format!("{what}: bad entry {part:?}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_assignments_and_skips_comments() {
        let f = write_config("# a comment\n\nseed = 42\n  bins=25  \n");
        let cfg = FileConfig::load(f.path()).unwrap();
        assert_eq!(cfg.get::<u64>("seed").unwrap(), Some(42));
        assert_eq!(cfg.get::<usize>("bins").unwrap(), Some(25));
        assert_eq!(cfg.get::<usize>("max_epochs").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        let f = write_config("bogus_key = 1\n");
        assert!(FileConfig::load(f.path()).is_err());
        let f = write_config("just words\n");
        assert!(FileConfig::load(f.path()).is_err());
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let f = write_config("bins = 25\n");
        let cfg = FileConfig::load(f.path()).unwrap();
        assert_eq!(resolve(Some(99usize), &cfg, "bins", 75).unwrap(), 99);
        assert_eq!(resolve(None::<usize>, &cfg, "bins", 75).unwrap(), 25);
        assert_eq!(
            resolve(None::<usize>, &cfg, "max_epochs", 300).unwrap(),
            300
        );
    }

    #[test]
    fn usize_lists_parse_with_spaces() {
        assert_eq!(
            parse_usize_list("16, 32,16", "layer_sizes").unwrap(),
            vec![16, 32, 16]
        );
        assert!(parse_usize_list("16,x", "layer_sizes").is_err());
    }
}
