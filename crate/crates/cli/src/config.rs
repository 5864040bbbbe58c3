use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::UsageError;

const SECTIONS: [&str; 6] = [
    "generate-data",
    "partition",
    "train",
    "eval",
    "perturb-eval",
    "validate-manifest",
];

/// Reads the config file and returns the table for `command`, or an empty
/// table when the file has none. Top-level keys and unknown sections are
/// rejected.
pub fn load_section(path: &Path, command: &str) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    let mut doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| UsageError(format!("{}: {}", path.display(), e.message())))?;
    for (key, value) in &doc {
        if !SECTIONS.contains(&key.as_str()) || !value.is_table() {
            return Err(UsageError(format!("{}: unknown config section `{key}`", path.display())).into());
        }
    }
    match doc.remove(command) {
        Some(Value::Table(t)) => Ok(t),
        _ => Ok(Table::new()),
    }
}

/// Overlays the flags given on the command line onto `file`.
pub fn merge<T: Serialize + DeserializeOwned>(cli: &T, mut file: Table, command: &str) -> Result<T> {
    let given = Table::try_from(cli).context("flags do not serialize")?;
    for (k, v) in given {
        file.insert(k, v);
    }
    Value::Table(file)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("[{command}] {}", e.message())).into())
}
