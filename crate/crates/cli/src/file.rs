//! The config file: TOML with a `[smooth]`, `[calibrate]`, `[weights]` or
//! `[experiment]` table of flat `key = value` pairs named like the flags
//! (with `_` for `-`).

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use clap::CommandFactory;
use serde::de::DeserializeOwned;

use crate::args::Cli;

/// Reads the section of `command` from `path`; a missing section is empty.
pub fn load_section<T: DeserializeOwned + Default>(path: &Path, command: &str) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    parse_section(&text, command).with_context(|| format!("config file {}", path.display()))
}

pub fn parse_section<T: DeserializeOwned + Default>(text: &str, command: &str) -> anyhow::Result<T> {
    let mut doc: toml::Table = text.parse()?;
    for key in doc.keys() {
        if !is_command(key) {
            bail!("unknown section [{key}]");
        }
    }
    let Some(section) = doc.remove(command) else {
        return Ok(T::default());
    };
    let toml::Value::Table(table) = section else {
        bail!("[{command}] must be a table");
    };
    let known = known_keys(command);
    if let Some(key) = table.keys().find(|k| !known.contains(k.as_str())) {
        bail!("unknown key `{key}` in [{command}]");
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| anyhow!("[{command}]: {}", e.message()))
}

fn is_command(name: &str) -> bool {
    Cli::command().find_subcommand(name).is_some()
}

fn known_keys(command: &str) -> BTreeSet<String> {
    let cli = Cli::command();
    let sub = cli.find_subcommand(command).expect("command exists");
    sub.get_arguments()
        .map(|a| a.get_id().as_str().to_string())
        .filter(|id| !matches!(id.as_str(), "threads" | "config" | "help" | "version"))
        .collect()
}
