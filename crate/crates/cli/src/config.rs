//! Config files hold `flag = value` lines named after long flags. Values
//! fill in flags the command line leaves out; keys the chosen subcommand
//! does not take are ignored, keys no subcommand takes are errors.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context};
use clap::{ArgAction, CommandFactory, FromArgMatches};

use crate::Cli;

/// Global options that take a value; skipped while locating the subcommand.
const GLOBAL_VALUED: [&str; 2] = ["--server", "--config"];

pub fn parse_config(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected `flag = value`", n + 1);
        };
        let k = k.trim().trim_start_matches("--").to_owned();
        out.push((k, v.trim().to_owned()));
    }
    Ok(out)
}

fn config_path(args: &[String]) -> Option<String> {
    args.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            args.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_owned)
        }
    })
}

fn subcommand_at(args: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        if GLOBAL_VALUED.contains(&a.as_str()) {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            return Some(i);
        }
    }
    None
}

fn given(args: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
}

fn truthy(v: &str) -> anyhow::Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => bail!("`{other}` is not a boolean"),
    }
}

/// Argument vector with config entries appended for every flag not given.
pub fn merge(mut args: Vec<String>, entries: &[(String, String)]) -> anyhow::Result<Vec<String>> {
    let cmd = Cli::command();
    let sub = subcommand_at(&args).and_then(|i| cmd.find_subcommand(&args[i]).cloned());
    let known = |long: &str| {
        cmd.get_arguments().any(|a| a.get_long() == Some(long))
            || cmd
                .get_subcommands()
                .any(|s| s.get_arguments().any(|a| a.get_long() == Some(long)))
    };
    let mut extra = Vec::new();
    for (k, v) in entries {
        if k == "config" {
            continue;
        }
        if !known(k) {
            bail!("config key `{k}` matches no flag");
        }
        if given(&args, k) {
            continue;
        }
        let arg = cmd
            .get_arguments()
            .chain(sub.iter().flat_map(|s| s.get_arguments()))
            .find(|a| a.get_long() == Some(k.as_str()));
        let Some(arg) = arg else { continue };
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            if truthy(v).with_context(|| format!("config key `{k}`"))? {
                extra.push(format!("--{k}"));
            }
        } else {
            extra.push(format!("--{k}={v}"));
        }
    }
    args.extend(extra);
    Ok(args)
}

/// Parses the command line after folding in `--config`. Clap errors,
/// including `--help`, print and exit as usual.
pub fn parse_with_config(raw: Vec<OsString>) -> anyhow::Result<Cli> {
    let args: Vec<String> = raw.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let args = match config_path(&args) {
        Some(path) => {
            let text = std::fs::read_to_string(Path::new(&path)).with_context(|| format!("reading config {path}"))?;
            merge(args, &parse_config(&text)?)?
        }
        None => args,
    };
    let matches = Cli::command().get_matches_from(args);
    Ok(Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit()))
}
