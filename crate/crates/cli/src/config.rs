//! Config files are merged by turning each entry into a command-line flag
//! placed right after the subcommand, skipped when the same flag is already
//! on the command line.
//!
//! Two forms are accepted. A JSON object:
//!
//! ```json
//! {"seed": 7, "a-range": [16, 23], "no-augment": true}
//! ```
//!
//! or `key=value` lines, with `#` comments:
//!
//! ```text
//! seed = 7
//! a-range = 16,23
//! no-augment = true
//! ```
//!
//! Keys are long flag names; underscores may stand in for hyphens. `true`
//! sets a switch, `false` leaves it off, arrays become comma lists.

use std::ffi::OsString;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigValue {
    Switch(bool),
    Text(String),
}

pub fn parse_config(text: &str) -> Result<Vec<(String, ConfigValue)>, String> {
    let trimmed = text.trim_start();
    let entries = if trimmed.starts_with('{') {
        parse_json(trimmed)?
    } else {
        parse_lines(text)?
    };
    Ok(entries.into_iter().map(|(k, v)| (k.trim().replace('_', "-"), v)).collect())
}

fn parse_json(text: &str) -> Result<Vec<(String, ConfigValue)>, String> {
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| format!("config is not a JSON object: {e}"))?;
    let scalar = |v: &serde_json::Value| -> Result<String, String> {
        match v {
            serde_json::Value::String(s) => Ok(s.clone()),
            serde_json::Value::Number(n) => Ok(n.to_string()),
            other => Err(format!("unsupported config value {other}")),
        }
    };
    let mut out = Vec::new();
    for (k, v) in obj {
        let value = match &v {
            serde_json::Value::Null => continue,
            serde_json::Value::Bool(b) => ConfigValue::Switch(*b),
            serde_json::Value::Array(items) => {
                ConfigValue::Text(items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?.join(","))
            }
            other => ConfigValue::Text(scalar(other)?),
        };
        out.push((k, value));
    }
    Ok(out)
}

fn parse_lines(text: &str) -> Result<Vec<(String, ConfigValue)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("config line {}: expected key=value", i + 1))?;
        let v = v.trim();
        let value = match v {
            "true" => ConfigValue::Switch(true),
            "false" => ConfigValue::Switch(false),
            _ => ConfigValue::Text(v.to_owned()),
        };
        out.push((k.to_owned(), value));
    }
    Ok(out)
}

/// `--config FILE` or `--config=FILE` anywhere in `args`.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Some(rest.into());
        }
    }
    None
}

fn has_flag(args: &[OsString], flag: &str) -> bool {
    let eq = format!("{flag}=");
    args.iter().any(|a| a.to_str().is_some_and(|s| s == flag || s.starts_with(&eq)))
}

/// `args` (program name first) with the config file's entries spliced in.
pub fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let entries = parse_config(&text)?;
    let Some(sub) = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(args);
    };
    let at = sub + 2;
    let mut injected = Vec::new();
    for (key, value) in entries {
        let flag = format!("--{key}");
        if key == "config" || has_flag(&args, &flag) {
            continue;
        }
        match value {
            ConfigValue::Switch(true) => injected.push(OsString::from(flag)),
            ConfigValue::Switch(false) => {}
            ConfigValue::Text(v) => {
                injected.push(OsString::from(format!("{flag}={v}")));
            }
        }
    }
    let mut out = args[..at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}
