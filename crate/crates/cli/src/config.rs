//! `key = value` config files.
//!
//! Each non-blank line not starting with `#` is `key = value`, where `key`
//! is a long flag name without the dashes and `value` is JSON (a bare word
//! is taken as a string). Flags given on the command line win over the file.

use std::path::Path;

use jointrecon_core::{Error, Result};
use serde_json::Value;

/// Reads a config file into `(key, value)` pairs in file order.
pub fn parse_config(path: &Path) -> Result<Vec<(String, Value)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::MissingInput(format!("config file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parameter(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                n + 1
            )));
        };
        let key = key.trim();
        if key.is_empty() || key.starts_with('-') {
            return Err(Error::Parameter(format!("{}:{}: bad key '{key}'", path.display(), n + 1)));
        }
        let raw = value.trim();
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        out.push((key.to_string(), value));
    }
    Ok(out)
}

fn scalar(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::Parameter(format!("config key '{key}' has unsupported value {other}"))),
    }
}

/// Turns config entries into flags, skipping keys already given in `given`.
pub fn config_args(entries: &[(String, Value)], given: &[String]) -> Result<Vec<String>> {
    let on_command_line = |key: &str| {
        let flag = format!("--{key}");
        given.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
    };
    let mut args = Vec::new();
    for (key, value) in entries {
        if key == "config" || on_command_line(key) {
            continue;
        }
        let flag = format!("--{key}");
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => args.push(flag),
            Value::Array(items) => {
                for item in items {
                    args.push(flag.clone());
                    args.push(scalar(key, item)?);
                }
            }
            v => {
                args.push(flag);
                args.push(scalar(key, v)?);
            }
        }
    }
    Ok(args)
}

/// Expands `--config FILE` in `argv` (program, subcommand, flags...).
pub fn expand_argv(argv: Vec<String>) -> Result<Vec<String>> {
    if argv.len() < 2 {
        return Ok(argv);
    }
    let flags = &argv[2..];
    let mut path = None;
    for (i, a) in flags.iter().enumerate() {
        if a == "--config" {
            path = flags.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let extra = config_args(&parse_config(Path::new(&path))?, flags)?;
    let mut out = argv[..2].to_vec();
    out.extend(extra);
    out.extend_from_slice(flags);
    Ok(out)
}
