//! `--config FILE`: `key=value` lines that fill in flags the command line
//! leaves unset. Keys are long flag names without the leading dashes.

use std::fs;

use clap::Command;

#[derive(Debug)]
pub enum ConfigError {
    /// Key that names no flag of the subcommand.
    Usage(String),
    /// Unreadable file or malformed line.
    Invalid(String),
}

fn flag_given(args: &[String], long: &str) -> bool {
    let bare = format!("--{long}");
    let eq = format!("--{long}=");
    args.iter().any(|a| *a == bare || a.starts_with(&eq))
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Returns `argv` with the config file's entries spliced in right after the
/// subcommand name.
pub fn inject(argv: &[String], cli: &Command) -> Result<Vec<String>, ConfigError> {
    let Some(sub_idx) = argv.iter().skip(1).position(|a| !a.starts_with('-')).map(|i| i + 1) else {
        return Ok(argv.to_vec());
    };
    let rest = &argv[sub_idx + 1..];
    let Some(path) = config_path(rest) else {
        return Ok(argv.to_vec());
    };
    let Some(sub) = cli.find_subcommand(&argv[sub_idx]) else {
        return Ok(argv.to_vec());
    };
    let text =
        fs::read_to_string(&path).map_err(|e| ConfigError::Invalid(format!("cannot read config {path}: {e}")))?;

    let mut extra = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Invalid(format!("{path}:{}: expected key=value", i + 1)));
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(ConfigError::Invalid(format!(
                "{path}:{}: config files cannot nest",
                i + 1
            )));
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            return Err(ConfigError::Usage(format!(
                "{path}:{}: '{key}' is not a flag of '{}'",
                i + 1,
                sub.get_name()
            )));
        };
        if flag_given(rest, &key) {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}={value}"));
        } else {
            match value {
                "true" | "1" | "yes" => extra.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "{path}:{}: '{key}' expects true or false, got '{other}'",
                        i + 1
                    )))
                }
            }
        }
    }
    let mut out = argv[..=sub_idx].to_vec();
    out.extend(extra);
    out.extend_from_slice(rest);
    Ok(out)
}
