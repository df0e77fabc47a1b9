//! Scenario configuration files.
//!
//! A file holds one scenario object or an array of them:
//!
//! ```json
//! {
//!   "name": "bimodal",
//!   "x": {"dim": 1, "components": [
//!     {"weight": 0.5, "mean": [-2.0], "cov": [[1.0]]},
//!     {"weight": 0.5, "mean": [2.0], "cov": [[1.0]]}]},
//!   "y": {"dim": 1, "components": [{"weight": 1.0, "mean": [0.0], "cov": [[1.0]]}]},
//!   "lambdas": [0.25, 0.5],
//!   "n_samples": 100000,
//!   "seed": 7,
//!   "estimators": ["resubstitution", "change_of_variables"],
//!   "t_values": [1.0, 0.1, 0.01]
//! }
//! ```
//!
//! `y`, `lambdas`, `estimators` and `t_values` are optional; unknown fields
//! are rejected.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use knothe_epi::densities::GaussianMixture;
use knothe_epi::entropy::{EntropyMethod, MIN_SAMPLES};
use knothe_epi::epi::MIN_EPI_SAMPLES;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub x: GaussianMixture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<GaussianMixture>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<EntropyMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_values: Option<Vec<f64>>,
}

fn all_estimators() -> Vec<EntropyMethod> {
    vec![EntropyMethod::Resubstitution, EntropyMethod::ChangeOfVariables, EntropyMethod::DivergenceRoute]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Entropy,
    MapCheck,
    Epi,
    Smooth,
    Sample,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: line {line}, column {column}, at `{field}`: {message}", path.display())]
    Parse { path: PathBuf, line: usize, column: usize, field: String, message: String },

    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

/// Reads and parses `path`; no semantic checks beyond the mixture invariants.
pub fn load(path: &Path) -> Result<Vec<ScenarioConfig>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse(&text).map_err(|(field, e)| ConfigError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        field,
        message: e.to_string(),
    })
}

fn parse(text: &str) -> Result<Vec<ScenarioConfig>, (String, serde_json::Error)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let out = if text.trim_start().starts_with('[') {
        serde_path_to_error::deserialize(de)
    } else {
        serde_path_to_error::deserialize(de).map(|one: ScenarioConfig| vec![one])
    };
    let configs = out.map_err(|e| (e.path().to_string(), e.into_inner()))?;
    let mut de = serde_json::Deserializer::from_str(text);
    // reject trailing content after the top-level value
    serde::de::IgnoredAny::deserialize(&mut de).and_then(|_| de.end()).map_err(|e| (".".to_string(), e))?;
    Ok(configs)
}

/// Checks every scenario against the needs of `command` before any work starts.
pub fn validate(configs: &[ScenarioConfig], command: Command) -> Result<(), ConfigError> {
    if configs.is_empty() {
        return Err(invalid("scenarios", "at least one scenario is required"));
    }
    if command == Command::Sample && configs.len() != 1 {
        return Err(invalid("scenarios", format!("sample takes exactly one scenario, got {}", configs.len())));
    }
    let mut names = HashSet::new();
    for (i, c) in configs.iter().enumerate() {
        let at = |field: &str| format!("[{i}].{field}");
        if c.name.trim().is_empty() {
            return Err(invalid(at("name"), "must not be empty"));
        }
        if !names.insert(c.name.as_str()) {
            return Err(invalid(at("name"), format!("duplicate scenario name `{}`", c.name)));
        }
        let min_n = match command {
            Command::Epi => MIN_EPI_SAMPLES,
            Command::Sample => 1,
            _ => MIN_SAMPLES,
        };
        if c.n_samples < min_n {
            return Err(invalid(at("n_samples"), format!("must be at least {min_n}, got {}", c.n_samples)));
        }
        if let Some(y) = &c.y {
            if y.dim() != c.x.dim() {
                return Err(invalid(at("y.dim"), format!("must equal x.dim = {}, got {}", c.x.dim(), y.dim())));
            }
        }
        for (k, l) in c.lambdas.iter().enumerate() {
            if !(*l > 0.0 && *l < 1.0) {
                return Err(invalid(at(&format!("lambdas[{k}]")), format!("must lie in (0, 1), got {l}")));
            }
        }
        if let Some(ts) = &c.t_values {
            for (k, t) in ts.iter().enumerate() {
                if !(*t > 0.0 && t.is_finite()) {
                    return Err(invalid(at(&format!("t_values[{k}]")), format!("must be positive and finite, got {t}")));
                }
                if k > 0 && *t >= ts[k - 1] {
                    return Err(invalid(at(&format!("t_values[{k}]")), "values must be strictly decreasing"));
                }
            }
        }
        match command {
            Command::Epi => {
                if c.y.is_none() {
                    return Err(invalid(at("y"), "required by epi"));
                }
                if c.lambdas.is_empty() {
                    return Err(invalid(at("lambdas"), "must not be empty for epi"));
                }
            }
            Command::Entropy => {
                if c.estimators.is_empty() {
                    return Err(invalid(at("estimators"), "must not be empty"));
                }
                let mut seen = HashSet::new();
                for (k, m) in c.estimators.iter().enumerate() {
                    let field = at(&format!("estimators[{k}]"));
                    if !seen.insert(*m) {
                        return Err(invalid(field, format!("duplicate estimator {m:?}")));
                    }
                    if *m == EntropyMethod::ClosedForm && !c.x.is_gaussian() {
                        return Err(invalid(field, "closed_form needs a single-component x"));
                    }
                    if *m == EntropyMethod::QuadratureOracle && c.x.dim() != 1 {
                        return Err(invalid(field, "quadrature_oracle needs a one-dimensional x"));
                    }
                }
            }
            Command::Smooth => {
                if c.t_values.as_ref().is_none_or(|t| t.is_empty()) {
                    return Err(invalid(at("t_values"), "required by smooth"));
                }
            }
            Command::MapCheck | Command::Sample => {}
        }
    }
    Ok(())
}
