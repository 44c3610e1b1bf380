//! `--config FILE` support.
//!
//! The file holds `key = value` lines. Each becomes `--key value` and is
//! spliced in directly after the subcommand name, ahead of the user's own
//! flags, so anything given on the command line overrides the file.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};

/// Parses config text into flag tokens. `true` turns into a bare flag and
/// `false` drops the key.
pub fn config_args(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`, got {raw:?}", n + 1);
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("line {}: invalid key {key:?}", n + 1);
        }
        let value = value.trim().trim_matches('"');
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Returns `args` with the config file's flags inserted after the
/// subcommand, or unchanged when no `--config` is present.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let extra = config_args(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let at = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map_or(args.len(), |i| i + 2);
    let mut out = args[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}
