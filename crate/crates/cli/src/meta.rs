//! The JSON sidecar written next to every run's outputs.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

pub const VERSION: &str = env!("RAP_VERSION");

#[derive(Serialize)]
struct Meta<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a C,
    outputs: &'a [String],
    #[serde(skip_serializing_if = "Value::is_null")]
    diagnostics: Value,
}

/// `<out>/<command>.meta.json`. Holds nothing that varies between identical
/// runs (no timestamps, no worker count).
pub fn write_meta<C: Serialize>(out: &Path, command: &str, seed: u64, config: &C, outputs: &[String], diagnostics: Value) -> Result<()> {
    let meta = Meta {
        command,
        version: VERSION,
        seed,
        config,
        outputs,
        diagnostics,
    };
    let path = out.join(format!("{command}.meta.json"));
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
