//! Config-file sections. Every key mirrors the long flag of the same command
//! with `-` replaced by `_`; inline flags take precedence over file values.

use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub quantile: QuantileSection,
    pub map: MapSection,
    pub fit: FitSection,
    pub bayes: BayesSection,
    pub simulate: SimulateSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantileSection {
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub level: Option<f64>,
    pub engine: Option<String>,
    pub shift: Option<f64>,
    pub seed: Option<u64>,
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSection {
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub psi: Option<f64>,
    pub theta: Option<f64>,
    pub model: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub data: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub model: Option<String>,
    pub years: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesSection {
    pub data: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub years: Option<usize>,
    pub level: Option<f64>,
    #[serde(rename = "K", alias = "k")]
    pub k: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub lambda: Option<f64>,
    pub psi: Option<f64>,
    pub years: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub study: Option<String>,
    pub model: Option<String>,
    pub mu: Option<f64>,
    pub sigmas: Option<Vec<f64>>,
    pub thetas: Option<Vec<f64>>,
    pub psis: Option<Vec<f64>>,
    pub level: Option<f64>,
    pub engine: Option<String>,
    pub full: Option<bool>,
    pub mc_samples: Option<usize>,
    pub seed: Option<u64>,
    pub alphas: Option<Vec<f64>>,
    pub t_step: Option<f64>,
    pub out: Option<PathBuf>,
}

pub fn load(path: &Path) -> Result<ConfigFile, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
}
