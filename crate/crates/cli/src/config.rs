//! Run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use euq_core::epistemic::validate_tau;
use euq_core::models::diffusion::{standard_log_mean, standard_sigma_max, STANDARD_CORRELATION};
use euq_core::models::Link;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Diffusion,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Diffusion grid cells along `x1` and `x2`.
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub left: f64,
    pub right: f64,
    pub sink: f64,
    /// Synthetic model: number of points on `[0, 1]` and output link.
    pub points: usize,
    pub link: Link,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Diffusion,
            nx: 120,
            ny: 30,
            lx: 240.0,
            ly: 60.0,
            left: 50.0,
            right: 25.0,
            sink: -1.0,
            points: 21,
            link: Link::Exp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovarianceConfig {
    /// Maximal standard deviation of the log-coefficient (synthetic: of the
    /// exponent).
    pub sigma_max: f64,
    /// Diagonal of `L`.
    pub correlation: [f64; 2],
    /// Constant mean `a_0` of the log-conductivity.
    pub mean: f64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            sigma_max: standard_sigma_max(),
            correlation: STANDARD_CORRELATION,
            mean: standard_log_mean(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StochasticConfig {
    pub dim: usize,
    pub degree: u32,
    /// Sparse-grid level; `degree + 2` when absent.
    pub level: Option<u32>,
    pub taus: Vec<f64>,
    /// Build the full-dimensional gPC (off for DD-only runs in high `d`).
    pub full: bool,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            degree: 3,
            level: None,
            taus: (1..=9).map(|k| k as f64 / 10.0).collect(),
            full: true,
        }
    }
}

impl StochasticConfig {
    pub fn effective_level(&self) -> u32 {
        self.level.unwrap_or(self.degree + 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdConfig {
    pub enabled: bool,
    /// `[p, q]` blocks (diffusion) or `p * q` intervals (synthetic).
    pub layout: [usize; 2],
    pub reduced_dim: usize,
    pub degree: u32,
    pub coarse_level: u32,
    /// Local sparse-grid level; `degree + 2` when absent.
    pub level: Option<u32>,
}

impl Default for DdConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            layout: [4, 2],
            reduced_dim: 3,
            degree: 3,
            coarse_level: 2,
            level: None,
        }
    }
}

impl DdConfig {
    pub fn effective_level(&self) -> u32 {
        self.level.unwrap_or(self.degree + 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validation {
    None,
    Direct,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub bins: usize,
    /// Spatial index of the density point; domain center when absent.
    pub point: Option<usize>,
    pub density_samples: u64,
    pub validate: Validation,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 1,
            bins: 50,
            point: None,
            density_samples: 10_000,
            validate: Validation::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub cache: bool,
    pub model: ModelConfig,
    pub covariance: CovarianceConfig,
    pub stochastic: StochasticConfig,
    pub dd: DdConfig,
    pub mc: McConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            cache: true,
            model: ModelConfig::default(),
            covariance: CovarianceConfig::default(),
            stochastic: StochasticConfig::default(),
            dd: DdConfig::default(),
            mc: McConfig::default(),
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        match m.kind {
            ModelKind::Diffusion => {
                if m.nx < 3 || m.ny < 3 {
                    return Err(invalid("model.nx/model.ny", "diffusion grid must be at least 3x3"));
                }
                if !(m.lx > 0.0 && m.ly > 0.0) {
                    return Err(invalid("model.lx/model.ly", "domain extents must be positive"));
                }
            }
            ModelKind::Synthetic => {
                if m.points == 0 {
                    return Err(invalid("model.points", "need at least one point"));
                }
            }
        }
        let c = &self.covariance;
        if !(c.sigma_max > 0.0 && c.sigma_max.is_finite()) {
            return Err(invalid("covariance.sigma_max", "must be positive"));
        }
        if c.correlation.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(invalid("covariance.correlation", "entries must be positive"));
        }
        let s = &self.stochastic;
        if s.dim == 0 {
            return Err(invalid("stochastic.dim", "must be at least 1"));
        }
        if s.level == Some(0) {
            return Err(invalid("stochastic.level", "must be at least 1"));
        }
        for (k, &tau) in s.taus.iter().enumerate() {
            if validate_tau(tau).is_err() {
                return Err(invalid(&format!("stochastic.taus[{k}]"), format!("{tau} is outside [1e-6, 1]")));
            }
        }
        if !s.full && !self.dd.enabled {
            return Err(invalid("stochastic.full", "either the full gPC or the DD stage must be enabled"));
        }
        let dd = &self.dd;
        if dd.enabled {
            if dd.reduced_dim == 0 || dd.reduced_dim > s.dim {
                return Err(invalid(
                    "dd.reduced_dim",
                    format!("must satisfy 1 <= r <= stochastic.dim = {}", s.dim),
                ));
            }
            if dd.layout[0] == 0 || dd.layout[1] == 0 {
                return Err(invalid("dd.layout", "block counts must be positive"));
            }
            if dd.coarse_level < 2 {
                return Err(invalid("dd.coarse_level", "must be at least 2"));
            }
            if dd.level == Some(0) {
                return Err(invalid("dd.level", "must be at least 1"));
            }
        }
        let mc = &self.mc;
        if mc.samples < 2 {
            return Err(invalid("mc.samples", "must be at least 2"));
        }
        if mc.bins < 2 {
            return Err(invalid("mc.bins", "must be at least 2"));
        }
        if mc.density_samples < 2 {
            return Err(invalid("mc.density_samples", "must be at least 2"));
        }
        if let Some(p) = mc.point {
            if p >= self.num_points() {
                return Err(invalid("mc.point", format!("index {p} exceeds {} spatial points", self.num_points())));
            }
        }
        Ok(())
    }

    pub fn num_points(&self) -> usize {
        match self.model.kind {
            ModelKind::Diffusion => self.model.nx * self.model.ny,
            ModelKind::Synthetic => self.model.points,
        }
    }

    /// The part of the configuration that determines offline artifacts.
    pub fn offline_view(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "covariance": self.covariance,
            "stochastic": {
                "dim": self.stochastic.dim,
                "degree": self.stochastic.degree,
                "level": self.stochastic.effective_level(),
                "full": self.stochastic.full,
            },
            "dd": self.dd,
        })
    }

    /// SHA-256 of the offline view.
    pub fn offline_hash(&self) -> String {
        hash_json(&self.offline_view())
    }

    /// SHA-256 of the model definition alone (model and covariance).
    pub fn model_hash(&self) -> String {
        hash_json(&serde_json::json!({
            "model": self.model,
            "covariance": self.covariance,
            "dim": self.stochastic.dim,
        }))
    }
}

pub fn hash_json(value: &serde_json::Value) -> String {
    hash_bytes(value.to_string().as_bytes())
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses `0.1,0.5,0.9`.
pub fn parse_tau_list(text: &str) -> Result<Vec<f64>, CliError> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .enumerate()
        .map(|(k, s)| {
            let tau: f64 = s
                .trim()
                .parse()
                .map_err(|_| invalid(&format!("--tau[{k}]"), format!("'{}' is not a number", s.trim())))?;
            validate_tau(tau).map_err(|_| invalid(&format!("--tau[{k}]"), format!("{tau} is outside [1e-6, 1]")))?;
            Ok(tau)
        })
        .collect()
}

/// Flattened `path = value` differences between two JSON documents.
pub fn json_diff(old: &serde_json::Value, new: &serde_json::Value) -> Vec<String> {
    fn walk(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
        match (a, b) {
            (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    let null = serde_json::Value::Null;
                    walk(&path, x.get(k).unwrap_or(&null), y.get(k).unwrap_or(&null), out);
                }
            }
            _ if a != b => out.push(format!("{prefix}: artifact {a} vs config {b}")),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk("", old, new, &mut out);
    out
}
