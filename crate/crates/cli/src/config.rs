//! Merging of JSON config files with command-line flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Reads a JSON object of default parameter values.
pub fn load(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::Usage(format!("config {} must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("config {}: {e}", path.display()))),
    }
}

/// Overlays the non-null flag values on the config map and deserializes the result.
pub fn resolve<F: Serialize, C: DeserializeOwned>(flags: &F, config: &Map<String, Value>) -> Result<C, CliError> {
    let mut merged = config.clone();
    merged.remove("command");
    if let Value::Object(set) = serde_json::to_value(flags).expect("flags serialize") {
        for (key, value) in set {
            if !value.is_null() {
                merged.insert(key, value);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("missing field ") {
            Some(key) => CliError::Usage(format!("missing required key {key}")),
            None => CliError::Usage(msg),
        }
    })
}

/// Options shared by every subcommand.
#[derive(Clone, Debug, Default, Serialize, Deserialize, clap::Args)]
#[serde(rename_all = "kebab-case")]
pub struct Common {
    /// Base seed of every random draw
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; output does not depend on it
    #[arg(long)]
    pub threads: Option<usize>,
    /// CSV output file (standard output if absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A noise-level sweep: a number, a list, or a string such as `1e-2,1e-3`
/// or `1e-2:1e-5:4` (four log-spaced values from 1e-2 down to 1e-5).
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Deltas {
    One(f64),
    List(Vec<f64>),
    Text(String),
}

impl Deltas {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        match self {
            Deltas::One(d) => Ok(vec![*d]),
            Deltas::List(v) => Ok(v.clone()),
            Deltas::Text(s) => parse_deltas(s),
        }
    }
}

pub fn parse_deltas(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("cannot parse noise levels `{s}`"));
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [start, stop, count] => {
            let start: f64 = start.parse().map_err(|_| bad())?;
            let stop: f64 = stop.parse().map_err(|_| bad())?;
            let count: usize = count.parse().map_err(|_| bad())?;
            if !(start > 0.0 && stop > 0.0) || count == 0 {
                return Err(bad());
            }
            if count == 1 {
                return Ok(vec![start]);
            }
            let (l0, l1) = (start.log10(), stop.log10());
            Ok((0..count)
                .map(|i| 10f64.powf(l0 + (l1 - l0) * i as f64 / (count - 1) as f64))
                .collect())
        }
        [list] => list.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| bad())).collect(),
        _ => Err(bad()),
    }
}

/// A vector given as a list or a comma-separated string.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Vector {
    List(Vec<f64>),
    Text(String),
}

impl Vector {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        match self {
            Vector::List(v) => Ok(v.clone()),
            Vector::Text(s) => s
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("cannot parse vector `{s}`"))))
                .collect(),
        }
    }
}
