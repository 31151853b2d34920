//! Flat `key = value` experiment files.
//!
//! Later pairs override earlier ones, so command-line overrides are applied by
//! appending them after the file's pairs.

use std::path::PathBuf;

use thiserror::Error;

use super::{DataSource, ExperimentSpec, HarnessError};
use crate::data::LabelRule;
use crate::losses::LossKind;
use crate::optimizer::{AnchorOption, Method, VarianceProbe};

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

pub const KEYS: &[&str] = &[
    "name",
    "data",
    "synth",
    "separability",
    "imbalanced",
    "positive_rate",
    "label_map",
    "binary_labels",
    "dim",
    "subsample",
    "scale",
    "model",
    "lambda",
    "methods",
    "grid",
    "steps",
    "epochs",
    "inner",
    "seeds",
    "out",
    "ref_tol",
    "anchor",
    "variance",
    "variance_cap",
    "parallel",
    "cache_dir",
];

/// Splits a config file into `(key, value)` pairs. `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError { line: idx + 1, msg: format!("expected key = value, got '{line}'") })?;
        let key = k.trim().to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError { line: idx + 1, msg: format!("unknown key '{key}'") });
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn list<T, F: Fn(&str) -> Result<T, String>>(key: &str, v: &str, f: F) -> Result<Vec<T>, HarnessError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(s).map_err(|e| HarnessError::Config(format!("{key}: {e}"))))
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse().map_err(|_| HarnessError::Config(format!("{key}: cannot parse '{v}'")))
}

fn flag(key: &str, v: &str) -> Result<bool, HarnessError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

impl ExperimentSpec {
    /// Builds a spec from pairs; later pairs win. A data source is required.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, HarnessError> {
        let last = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());

        let separability = match last("separability") {
            Some(v) => num::<f64>("separability", v)?,
            None => 0.9,
        };
        let mut labels = LabelRule::AsIs;
        if let Some(v) = last("binary_labels") {
            if flag("binary_labels", v)? {
                labels = LabelRule::Binary;
            }
        }
        if let Some(v) = last("label_map") {
            labels = LabelRule::parse_map(v).map_err(|e| HarnessError::Config(format!("label_map: {e}")))?;
        }
        let dim = last("dim").map(|v| num::<usize>("dim", v)).transpose()?;

        let positive_rate = match last("positive_rate") {
            Some(v) => num::<f64>("positive_rate", v)?,
            None => 0.1,
        };
        // Whichever source key appears last selects the source.
        let source_pair = pairs.iter().rev().find(|(k, _)| k == "data" || k == "synth" || k == "imbalanced");
        let data = match source_pair {
            Some((k, v)) if k == "data" => DataSource::Libsvm { path: PathBuf::from(v), labels, dim },
            Some((k, v)) if k == "imbalanced" => match DataSource::parse_synth(v, 0.0)? {
                DataSource::Synth { n, d, seed, .. } => DataSource::Imbalanced { n, d, seed, positive_rate },
                _ => unreachable!(),
            },
            Some((_, v)) => DataSource::parse_synth(v, separability)?,
            None => {
                return Err(HarnessError::Config(
                    "no data source (data = <file>, synth = n,d,seed or imbalanced = n,d,seed)".into(),
                ))
            }
        };
        let model = match last("model") {
            Some(v) => v.parse::<LossKind>().map_err(|e| HarnessError::Config(format!("model: {e}")))?,
            None => LossKind::Logistic,
        };

        let mut spec = ExperimentSpec::new(data, model);
        for (key, v) in pairs {
            let v = v.as_str();
            match key.as_str() {
                "name" => spec.name = v.to_string(),
                "subsample" => spec.subsample = Some(num("subsample", v)?),
                "scale" => spec.scale = flag("scale", v)?,
                "lambda" => spec.lambdas = list("lambda", v, |s| s.parse::<f64>().map_err(|e| e.to_string()))?,
                "methods" => spec.methods = list("methods", v, |s| s.parse::<Method>())?,
                "grid" => spec.grid = list("grid", v, |s| s.parse::<f64>().map_err(|e| e.to_string()))?,
                "steps" => spec.steps = list("steps", v, |s| Ok(s.to_string()))?,
                "epochs" => spec.epochs = num("epochs", v)?,
                "inner" => {
                    spec.inner_len = match v {
                        "2n" | "auto" => None,
                        _ => Some(num("inner", v)?),
                    }
                }
                "seeds" => spec.seeds = list("seeds", v, |s| s.parse::<u64>().map_err(|e| e.to_string()))?,
                "out" => spec.out_dir = Some(PathBuf::from(v)),
                "ref_tol" => spec.ref_tol = num("ref_tol", v)?,
                "anchor" => {
                    spec.anchor_option = match v.to_ascii_lowercase().as_str() {
                        "last" => AnchorOption::Last,
                        "random" => AnchorOption::Random,
                        _ => return Err(HarnessError::Config(format!("anchor: expected last|random, got '{v}'"))),
                    }
                }
                "variance" => {
                    spec.variance = match v.to_ascii_lowercase().as_str() {
                        "last" => VarianceProbe::LastIterate,
                        "start" => VarianceProbe::EpochStart,
                        "off" => VarianceProbe::Off,
                        _ => {
                            return Err(HarnessError::Config(format!("variance: expected last|start|off, got '{v}'")))
                        }
                    }
                }
                "variance_cap" => spec.variance_enum_cap = num("variance_cap", v)?,
                "parallel" => spec.parallel = flag("parallel", v)?,
                "cache_dir" => spec.cache_dir = Some(PathBuf::from(v)),
                _ => {}
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}
