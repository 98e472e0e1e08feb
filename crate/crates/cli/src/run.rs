//! Run manifests: `<output>.run.json` written next to a command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::Failure;

#[derive(Serialize)]
pub struct RunManifest<'a, P: Serialize> {
    pub command: &'a str,
    pub parameters: &'a P,
    pub version: &'static str,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
    pub results: Value,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".run.json");
    s.into()
}

/// Writes the manifest for a run whose main output is `outputs[0]`.
pub fn write<P: Serialize>(
    command: &str,
    parameters: &P,
    started_at: String,
    outputs: &[&Path],
    results: Value,
) -> Result<PathBuf, Failure> {
    let m = RunManifest {
        command,
        parameters,
        version: env!("CARGO_PKG_VERSION"),
        started_at,
        finished_at: now(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        results,
    };
    let path = manifest_path(outputs[0]);
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Failure::write(&path, e))?;
    Ok(path)
}
