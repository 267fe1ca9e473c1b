//! JSON run configuration: a config file merged with command-line overrides,
//! then deserialized into the command's resolved options.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug)]
pub struct ConfigError {
    /// Dotted path of the offending field, empty for whole-file problems.
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "config error: {}", self.message)
        } else {
            write!(f, "config error at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn whole(message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: String::new(),
        message: message.into(),
    }
}

fn read_file(path: &Path) -> Result<Map<String, Value>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| whole(format!("cannot read {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let value: Value = serde_path_to_error::deserialize(de).map_err(|e| ConfigError {
        path: e.path().to_string().trim_start_matches('.').to_string(),
        message: e.inner().to_string(),
    })?;
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(whole("top level must be a JSON object")),
    }
}

/// Merge `file` (if any) with `overrides` (flags win) and deserialize. A
/// `command` key in the file must name this command and is dropped.
pub fn resolve<C, O>(command: &str, file: Option<&PathBuf>, overrides: &O) -> Result<C, ConfigError>
where
    C: DeserializeOwned,
    O: Serialize,
{
    let mut merged = match file {
        Some(p) => read_file(p)?,
        None => Map::new(),
    };
    match merged.remove("command") {
        None => {}
        Some(Value::String(c)) if c == command => {}
        Some(other) => {
            return Err(ConfigError {
                path: "command".into(),
                message: format!("config is for {other}, not `{command}`"),
            })
        }
    }
    match serde_json::to_value(overrides).map_err(|e| whole(e.to_string()))? {
        Value::Object(m) => merged.extend(m),
        _ => return Err(whole("flag overrides must form an object")),
    }
    serde_path_to_error::deserialize(Value::Object(merged)).map_err(|e| ConfigError {
        path: e.path().to_string().trim_start_matches('.').to_string(),
        message: e.inner().to_string(),
    })
}
