//! Flat `key=value` configuration files and run manifests.
//!
//! A config file is spliced into the argument list as `--key=value` flags
//! placed before the user's own flags, so anything given on the command line
//! wins. Manifests use the same format, so a manifest doubles as a config.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Command};

use crate::UsageError;

/// Keys of a manifest that are not flags.
const MANIFEST_ONLY: [&str; 2] = ["subcommand", "version"];
const OUTPUT_PREFIX: &str = "output.";

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key=value", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<(usize, PathBuf)> {
    let mut it = argv.iter().enumerate().skip(1);
    while let Some((i, a)) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(|(_, p)| (i, PathBuf::from(p)));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some((i, PathBuf::from(p)));
        }
    }
    None
}

/// Position and name of the subcommand in `argv`.
fn subcommand_index(cmd: &Command, argv: &[OsString], config_at: Option<usize>) -> Option<usize> {
    let mut skip_next = false;
    for (i, a) in argv.iter().enumerate().skip(1) {
        if skip_next {
            skip_next = false;
            continue;
        }
        let s = a.to_string_lossy();
        if Some(i) == config_at && s == "--config" {
            skip_next = true;
            continue;
        }
        if s.starts_with('-') {
            continue;
        }
        return cmd.find_subcommand(s.as_ref()).map(|_| i);
    }
    None
}

/// Splices the `--config` file, if any, into `argv` ahead of the explicit flags.
pub fn expand_argv(cmd: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>, UsageError> {
    let Some((at, path)) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(sub_at) = subcommand_index(cmd, &argv, Some(at)) else {
        return Ok(argv);
    };
    let name = argv[sub_at].to_string_lossy().into_owned();
    let sub = cmd
        .find_subcommand(&name)
        .ok_or_else(|| UsageError(format!("unknown subcommand `{name}`")))?;
    let text = fs::read_to_string(&path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let mut injected = Vec::new();
    for (key, value) in parse_kv(&text)? {
        if key == "subcommand" && value != name {
            return Err(UsageError(format!(
                "config {} is for `{value}`, not `{name}`",
                path.display()
            )));
        }
        if MANIFEST_ONLY.contains(&key.as_str()) || key.starts_with(OUTPUT_PREFIX) {
            continue;
        }
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && a.get_id() != "config")
            .ok_or_else(|| UsageError(format!("unknown config key `{key}` for `{name}`")))?;
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{key}={value}")));
        } else {
            match value.as_str() {
                "true" => injected.push(OsString::from(format!("--{key}"))),
                "false" => {}
                _ => {
                    return Err(UsageError(format!(
                        "config key `{key}` takes true or false"
                    )))
                }
            }
        }
    }
    let mut out = argv[..=sub_at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[sub_at + 1..]);
    Ok(out)
}

/// Every flag of the subcommand with its resolved value, keyed by long name.
pub fn resolved_flags(sub: &Command, m: &ArgMatches) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for arg in sub.get_arguments() {
        let id = arg.get_id().as_str();
        let Some(long) = arg.get_long() else { continue };
        if matches!(id, "config" | "help" | "version") {
            continue;
        }
        let Ok(Some(raw)) = m.try_get_raw(id) else {
            continue;
        };
        let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        out.push((long.to_string(), vals.join(",")));
    }
    out
}

/// Manifest text: subcommand, version, resolved flags, then outputs.
pub fn manifest(
    subcommand: &str,
    flags: &[(String, String)],
    outputs: &[(String, &Path)],
) -> String {
    let mut s = format!(
        "subcommand={subcommand}\nversion={}\n",
        env!("CARGO_PKG_VERSION")
    );
    for (k, v) in flags {
        s.push_str(&format!("{k}={v}\n"));
    }
    for (label, path) in outputs {
        s.push_str(&format!("{OUTPUT_PREFIX}{label}={}\n", path.display()));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spaces() {
        let kv = parse_kv("# note\n\n seed = 7 \nsigmas=0.5,1\n").unwrap();
        assert_eq!(
            kv,
            vec![
                ("seed".to_string(), "7".to_string()),
                ("sigmas".to_string(), "0.5,1".to_string())
            ]
        );
        assert!(parse_kv("novalue\n").is_err());
        assert!(parse_kv("=3\n").is_err());
    }
}
