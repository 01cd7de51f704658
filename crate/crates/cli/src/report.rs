//! Result tables and the JSON summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use euq_core::epistemic::SweepRow;
use euq_core::Moments;

use crate::error::CliError;
use crate::io::{list_files, read_json, write_csv, write_json};

/// Floor of the denominator in relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-14;

/// Documented in output metadata.
pub const REL_ERROR_DEFINITION: &str = "max over spatial points of |approx - ref| / max(|ref|, 1e-14)";

pub const SWEEP_HEADER: [&str; 4] = ["tau", "spatial_index", "mean", "variance"];
pub const ERRORS_HEADER: [&str; 3] = ["tau", "max_rel_mean_error", "max_rel_variance_error"];

/// `max_p |approx_p - ref_p| / max(|ref_p|, 1e-14)`.
pub fn max_rel_error(approx: &[f64], reference: &[f64]) -> f64 {
    approx
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / r.abs().max(REL_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub tau: f64,
    pub max_rel_mean_error: f64,
    pub max_rel_variance_error: f64,
}

impl ErrorRow {
    pub fn new(tau: f64, approx: &Moments, reference: &Moments) -> Self {
        Self {
            tau,
            max_rel_mean_error: max_rel_error(&approx.mean, &reference.mean),
            max_rel_variance_error: max_rel_error(&approx.variance, &reference.variance),
        }
    }
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut records = Vec::new();
    for row in rows {
        for (p, (m, v)) in row.moments.mean.iter().zip(&row.moments.variance).enumerate() {
            records.push(vec![row.tau.to_string(), p.to_string(), m.to_string(), v.to_string()]);
        }
    }
    write_csv(path, &SWEEP_HEADER, &records)
}

pub fn write_errors(path: &Path, rows: &[ErrorRow]) -> Result<(), CliError> {
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.tau.to_string(),
                r.max_rel_mean_error.to_string(),
                r.max_rel_variance_error.to_string(),
            ]
        })
        .collect();
    write_csv(path, &ERRORS_HEADER, &records)
}

/// Density summary recorded in `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRecord {
    pub tau: f64,
    pub source: String,
    pub point_index: usize,
    pub samples: u64,
    pub bandwidth: f64,
    pub point_mass: bool,
    pub histogram: String,
    pub pdf: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OnlineResults {
    pub config_hash: String,
    pub taus: Vec<f64>,
    pub validation: String,
    pub error_definition: String,
    pub errors: Vec<ErrorRow>,
    pub errors_dd: Vec<ErrorRow>,
    pub densities: Vec<DensityRecord>,
    /// Kolmogorov-Smirnov distance between surrogate and direct samples.
    pub ks_distances: Vec<(f64, f64)>,
    pub online_model_evaluations: u64,
}

/// Writes `summary.json` from whatever artifacts exist in `out`, and the
/// error tables from `results.json` when present.
pub fn write_summary(out: &Path) -> Result<(), CliError> {
    let manifest: Option<serde_json::Value> = read_optional(&out.join("manifest.json"))?;
    let results: Option<OnlineResults> = read_optional(&out.join("online").join("results.json"))?;
    if let Some(r) = &results {
        if !r.errors.is_empty() {
            write_errors(&out.join("online").join("errors.csv"), &r.errors)?;
        }
        if !r.errors_dd.is_empty() {
            write_errors(&out.join("online").join("errors_dd.csv"), &r.errors_dd)?;
        }
    }
    let mut files = list_files(out)?;
    files.retain(|f| f != "summary.json" && !f.starts_with("cache/"));
    let summary = serde_json::json!({
        "config_hash": manifest.as_ref().and_then(|m| m.get("config_hash")).cloned(),
        "offline": manifest.as_ref().map(|m| serde_json::json!({
            "full": m.get("full"),
            "dd": m.get("dd"),
        })),
        "taus": results.as_ref().map(|r| r.taus.clone()).unwrap_or_default(),
        "errors": results.as_ref().map(|r| r.errors.clone()).unwrap_or_default(),
        "errors_dd": results.as_ref().map(|r| r.errors_dd.clone()).unwrap_or_default(),
        "error_definition": REL_ERROR_DEFINITION,
        "files": files,
    });
    write_json(&out.join("summary.json"), &summary)
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, CliError> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(max_rel_error(&[1.1, 0.0], &[1.0, 0.0]), 0.10000000000000009);
        assert_eq!(max_rel_error(&[1e-15], &[0.0]), 0.1);
        assert_eq!(max_rel_error(&[], &[]), 0.0);
    }

    #[test]
    fn error_table_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("errors.csv");
        write_errors(
            &path,
            &[ErrorRow {
                tau: 0.5,
                max_rel_mean_error: 1e-3,
                max_rel_variance_error: 2e-2,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "tau,max_rel_mean_error,max_rel_variance_error\n0.5,0.001,0.02\n");
    }
}
