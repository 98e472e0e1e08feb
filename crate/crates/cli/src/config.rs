//! `--config` support: a JSON object whose keys are flag names. Keys are
//! turned into command-line flags for the chosen subcommand unless the
//! command line already sets them. A run manifest (`*.run.json`) is accepted
//! too; its `parameters` object is used.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::CommandFactory;
use serde_json::{Map, Value};

use crate::Cli;

/// Returns `argv` with flags from the config file (if any) appended.
pub fn merge(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| format!("config {} is not valid JSON: {e}", path.display()))?;
    let Value::Object(mut obj) = value else {
        return Err(format!("config {} must be a JSON object", path.display()));
    };

    let sub = subcommand_name(&argv).ok_or("a subcommand is required")?;
    if let Some(Value::Object(params)) = obj.remove("parameters") {
        if let Some(Value::String(cmd)) = obj.get("command") {
            if cmd != &sub {
                return Err(format!("run manifest {} is for '{cmd}', not '{sub}'", path.display()));
            }
        }
        obj = params;
    }
    Ok(inject(argv, &sub, &obj))
}

fn config_path(argv: &[OsString]) -> Result<Option<PathBuf>, String> {
    for (i, arg) in argv.iter().enumerate() {
        let s = arg.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return argv
                .get(i + 1)
                .map(|p| Some(PathBuf::from(p)))
                .ok_or_else(|| "--config needs a path".to_string());
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some(PathBuf::from(p)));
        }
    }
    Ok(None)
}

fn subcommand_name(argv: &[OsString]) -> Option<String> {
    let cmd = Cli::command();
    let mut skip = false;
    for arg in argv.iter().skip(1) {
        let s = arg.to_string_lossy();
        if skip {
            skip = false;
            continue;
        }
        if s == "--config" {
            skip = true;
            continue;
        }
        if s.starts_with('-') {
            continue;
        }
        return cmd.find_subcommand(s.as_ref()).map(|c| c.get_name().to_string());
    }
    None
}

fn given_on_command_line(argv: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let with_value = format!("--{long}=");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&with_value)
    })
}

fn inject(mut argv: Vec<OsString>, sub: &str, obj: &Map<String, Value>) -> Vec<OsString> {
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(sub).expect("subcommand exists");
    for (key, value) in obj {
        let long = key.replace('_', "-");
        if long == "config" {
            continue;
        }
        let Some(arg) = sub_cmd.get_arguments().find(|a| a.get_long() == Some(long.as_str())) else {
            log::warn!("config key '{key}' is not a flag of '{sub}'; ignored");
            continue;
        };
        if given_on_command_line(&argv, &long) {
            continue;
        }
        let takes_value = arg.get_action().takes_values();
        match value {
            Value::Null => {}
            Value::Bool(b) if !takes_value => {
                if *b {
                    argv.push(format!("--{long}").into());
                }
            }
            Value::String(s) => {
                argv.push(format!("--{long}").into());
                argv.push(s.into());
            }
            other => {
                argv.push(format!("--{long}").into());
                argv.push(other.to_string().into());
            }
        }
    }
    argv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn command_line_wins_and_unknown_keys_are_skipped() {
        let obj: Map<String, Value> =
            serde_json::from_str(r#"{"lambda_rel": 0.2, "matrix": "m.sst", "out-csv": "x.csv", "bogus": 1}"#).unwrap();
        let argv = inject(os(&["chanprune", "importance", "--out-csv", "y.csv"]), "importance", &obj);
        let s: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert!(s.windows(2).any(|w| w == ["--lambda-rel", "0.2"]));
        assert!(s.windows(2).any(|w| w == ["--matrix", "m.sst"]));
        assert_eq!(s.iter().filter(|a| *a == "--out-csv").count(), 1);
        assert!(!s.iter().any(|a| a.contains("bogus")));
    }

    #[test]
    fn finds_subcommand_after_global_flag() {
        assert_eq!(
            subcommand_name(&os(&["chanprune", "--config", "c.json", "report"])).as_deref(),
            Some("report")
        );
        assert_eq!(subcommand_name(&os(&["chanprune", "--config", "c.json"])), None);
    }

    #[test]
    fn bool_flags() {
        let obj: Map<String, Value> = serde_json::from_str(r#"{"gcn": true}"#).unwrap();
        let argv = inject(os(&["chanprune", "capture"]), "capture", &obj);
        assert_eq!(argv.last().unwrap(), "--gcn");
        let obj: Map<String, Value> = serde_json::from_str(r#"{"gcn": false}"#).unwrap();
        assert_eq!(inject(os(&["chanprune", "capture"]), "capture", &obj).len(), 2);
    }
}
