//! Flat `key = value` run configuration.
//!
//! Keys are dotted paths into [`RunConfig`], e.g. `fit.iterations = 3000` or
//! `distill.sampling.n_fine = 16`. Values are JSON scalars; anything that does
//! not parse as one is taken as a string. `#` starts a comment.

use std::path::{Path, PathBuf};

use partdistill::distill::DistillConfig;
use partdistill::staticfit::FitConfig;
use partdistill::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub field: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub fit: FitConfig,
    pub distill: DistillConfig,
    pub paths: Paths,
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Parses the text of a config file; `origin` labels error messages.
pub fn parse(text: &str, origin: &Path) -> Result<RunConfig> {
    let mut root = Map::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::invalid(format!("{}:{}: expected `key = value`", origin.display(), n + 1)));
        };
        let key = key.trim();
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::invalid(format!("{}:{}: malformed key `{key}`", origin.display(), n + 1)));
        }
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            let entry = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
            let Value::Object(next) = entry else {
                return Err(Error::invalid(format!("{}:{}: `{p}` is both a value and a section", origin.display(), n + 1)));
            };
            node = next;
        }
        let last = parts[parts.len() - 1].to_string();
        if node.contains_key(&last) {
            return Err(Error::invalid(format!("{}:{}: duplicate key `{key}`", origin.display(), n + 1)));
        }
        node.insert(last, parse_value(value.trim()));
    }
    serde_json::from_value(Value::Object(root)).map_err(|e| Error::invalid(format!("{}: {e}", origin.display())))
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse(&text, path)
}
