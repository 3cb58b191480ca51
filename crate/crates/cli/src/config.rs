use std::fmt::Debug;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

/// Reads a TOML or JSON document, chosen by file extension. Unknown keys are
/// rejected by the target type and reported with the list of valid keys.
pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    let parsed = match ext {
        "toml" => toml::from_str(&text).map_err(|e| e.message().to_owned()),
        "json" => serde_json::from_str(&text).map_err(|e| e.to_string()),
        _ => {
            return Err(CliError::usage(format!(
                "{}: config must have a .toml or .json extension",
                path.display()
            )))
        }
    };
    parsed.map_err(|m| CliError::usage(format!("{}: {m}", path.display())))
}

/// Loads `path` when given, else the default value. Returns whether a file
/// was read.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<(T, bool)> {
    match path {
        Some(p) => Ok((load(p)?, true)),
        None => Ok((T::default(), false)),
    }
}

/// Applies a command-line override. Flags win over the config file, and a
/// conflicting value is logged.
pub fn apply<V: PartialEq + Debug + Clone>(flag: &str, value: Option<&V>, slot: &mut V, from_file: bool) {
    let Some(v) = value else { return };
    if from_file && slot != v {
        log::warn!("--{flag}={v:?} overrides config value {slot:?}");
    }
    *slot = v.clone();
}
