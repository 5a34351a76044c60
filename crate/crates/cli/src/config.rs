//! Config file handling. A config file is TOML with one table per
//! subcommand whose keys are the long flag names in snake_case:
//!
//! ```toml
//! [train]
//! events = "corpus.csv"
//! epochs = 20
//! ```
//!
//! Flags win over file values, file values win over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Fills every `None` field of `$flags` from `$file`.
macro_rules! merge_fields {
    ($flags:expr, $file:expr; $($field:ident),+ $(,)?) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field.take(); } )+
    };
}
pub(crate) use merge_fields;

/// Error raised for command-line misuse (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn missing(flag: &str) -> anyhow::Error {
    UsageError(format!("missing required argument --{flag} (give it on the command line or in the config file)")).into()
}

pub fn required<T>(value: &Option<T>, flag: &str) -> anyhow::Result<()> {
    if value.is_none() {
        return Err(missing(flag));
    }
    Ok(())
}

/// Reads table `section` of the config file at `path`, or defaults when no
/// file is given or the table is absent.
pub fn load_section<T: DeserializeOwned + Default>(path: Option<&Path>, section: &str) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut doc: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    match doc.remove(section) {
        Some(value) => value
            .try_into()
            .with_context(|| format!("invalid [{section}] table in {}", path.display())),
        None => Ok(T::default()),
    }
}

/// Writes `<dir>/<section>.resolved.toml` holding the fully resolved settings
/// in the same layout the config file uses.
pub fn write_snapshot<T: Serialize>(dir: &Path, section: &str, settings: &T) -> anyhow::Result<PathBuf> {
    let mut doc = toml::Table::new();
    doc.insert(section.to_string(), toml::Value::try_from(settings)?);
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{section}.resolved.toml"));
    std::fs::write(&path, toml::to_string(&doc)?).with_context(|| format!("writing {}", path.display()))?;
    log::info!("resolved config written to {}", path.display());
    Ok(path)
}

/// Directory that holds `file`.
pub fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
