//! `--config` support: a `key = value` file whose entries become flags.
//!
//! Entries are spliced in right after the subcommand name, so anything given
//! on the command line comes later and wins.

use std::ffi::OsString;
use std::fs;

/// Flags that take no value. `key = true` turns them on, `key = false` drops them.
const SWITCHES: &[&str] = &["outliers", "no-outliers", "tfidf"];

fn parse(text: &str, source: &str) -> Result<Vec<OsString>, String> {
    let mut args = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{source}: line {}: expected key = value", no + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(format!("{source}: line {}: invalid key {key:?}", no + 1));
        }
        if SWITCHES.contains(&key.as_str()) {
            match value {
                "true" | "1" | "yes" => args.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                other => {
                    return Err(format!(
                        "{source}: line {}: {key} expects true or false, got {other:?}",
                        no + 1
                    ))
                }
            }
        } else {
            args.push(format!("--{key}").into());
            args.push(value.into());
        }
    }
    Ok(args)
}

/// Removes `--config PATH` from `argv` and splices the file's entries in after
/// the subcommand.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        match arg.to_str() {
            Some("--config") => {
                path = Some(it.next().ok_or("--config needs a path")?);
            }
            Some(s) if s.starts_with("--config=") => path = Some(s["--config=".len()..].into()),
            _ => rest.push(arg),
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let name = path.to_string_lossy().into_owned();
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {name}: {e}"))?;
    let injected = parse(&text, &name)?;

    // argv[0] is the program, argv[1] the subcommand.
    let at = rest.len().min(2);
    rest.splice(at..at, injected);
    Ok(rest)
}
