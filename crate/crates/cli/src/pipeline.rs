//! Offline build, online evaluation, Monte Carlo and sweeps.
//!
//! Layout of the output directory:
//!
//! ```text
//! manifest.json            offline metadata and configuration hash
//! gpc.json                 full gPC expansion
//! kl.json, eigenvalues.csv KL basis (diffusion)
//! dd/                      coarse expansion, subdomain reductions, manifest
//! online/                  sweeps, error tables, densities, results.json
//! mc/                      Monte Carlo moment fields per tau
//! cache/                   evaluation cache
//! summary.json
//! ```

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use euq_core::ddreduce::{
    assemble_global, coarse_solve, dd_moments, local_surrogate, reduce_all, reduced_gpc, Layout, Partition,
    ReductionSettings, SubdomainReduction,
};
use euq_core::epistemic::{rescale_matrix, tau_sweep, SweepRow};
use euq_core::mcref::{density_at_point, ks_distance, mc_moments, sample_scalar, DensityEstimate};
use euq_core::models::{DiffusionModel, DiffusionProblem, SyntheticModel, TauScaled};
use euq_core::randfield::{discrete_kl, CovarianceSpec, KlBasis};
use euq_core::sparsegrid::smolyak;
use euq_core::{GpcExpansion, ModelError, Moments, StochasticModel};

use crate::cache::CachedModel;
use crate::config::{hash_json, json_diff, ModelKind, RunConfig, Validation};
use crate::error::CliError;
use crate::io::{ensure_dir, read_json, write_json, write_with};
use crate::report::{
    write_errors, write_summary, write_sweep, DensityRecord, ErrorRow, OnlineResults, REL_ERROR_DEFINITION,
};

/// Counts reported by a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    /// Calls that reached the underlying model (cache hits excluded).
    pub model_evaluations: u64,
    /// Evaluations charged to the method: quadrature nodes or samples.
    pub method_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullRecord {
    pub file: String,
    pub dim: usize,
    pub degree: u32,
    pub level: u32,
    pub terms: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdRecord {
    pub manifest: String,
    pub coarse_level: u32,
    pub coarse_evaluations: usize,
    pub subdomains: usize,
    pub reduced_dim: usize,
    pub degree: u32,
    pub level: u32,
    pub local_evaluations: Vec<usize>,
    pub total_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineManifest {
    pub config_hash: String,
    pub config: serde_json::Value,
    pub model_hash: String,
    pub kl_hash: String,
    pub error_definition: String,
    pub full: Option<FullRecord>,
    pub dd: Option<DdRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdomainRecord {
    pub id: usize,
    pub file: String,
    pub n_points: usize,
    /// Half-open runs `[start, end)` of global spatial indices.
    pub ranges: Vec<[usize; 2]>,
    pub rank: usize,
    pub energy_ratio: f64,
    pub eigenvalues: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdManifest {
    pub layout: Layout,
    pub subdomains: Vec<SubdomainRecord>,
}

enum Built {
    Diffusion(DiffusionModel),
    Synthetic(SyntheticModel),
}

impl Built {
    fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let d = cfg.stochastic.dim;
        let m = &cfg.model;
        let c = &cfg.covariance;
        Ok(match m.kind {
            ModelKind::Diffusion => {
                let problem = DiffusionProblem {
                    lx: m.lx,
                    ly: m.ly,
                    nx: m.nx,
                    ny: m.ny,
                    left: m.left,
                    right: m.right,
                    sink: m.sink,
                };
                let spec = CovarianceSpec::on_grid(c.sigma_max, c.correlation[0], c.correlation[1], problem.grid())?
                    .with_mean(c.mean);
                let kl = discrete_kl(&spec, d)?;
                Built::Diffusion(DiffusionModel::new(problem, kl)?)
            }
            ModelKind::Synthetic => Built::Synthetic(SyntheticModel::decaying(m.link, d, m.points, c.sigma_max)?),
        })
    }

    fn model(&self) -> &dyn StochasticModel {
        match self {
            Built::Diffusion(m) => m,
            Built::Synthetic(m) => m,
        }
    }

    fn kl(&self) -> Option<&KlBasis> {
        match self {
            Built::Diffusion(m) => Some(m.kl()),
            Built::Synthetic(_) => None,
        }
    }

    fn kl_hash(&self, cfg: &RunConfig) -> String {
        match self.kl() {
            Some(kl) => hash_json(&serde_json::to_value(kl).expect("KL basis serializes")),
            None => cfg.model_hash(),
        }
    }

    fn partition(&self, cfg: &RunConfig) -> Result<Partition, CliError> {
        let [p, q] = cfg.dd.layout;
        let points = self.model().spatial_points();
        Ok(match self {
            Built::Diffusion(m) => {
                let pr = m.problem();
                Partition::blocks_2d(points, [0.0, 0.0], [pr.lx, pr.ly], p, q)?
            }
            Built::Synthetic(_) => Partition::intervals_1d(points, 0.0, 1.0, p * q)?,
        })
    }
}

/// Spatial index of the density point: configured, or the domain center.
fn density_point(cfg: &RunConfig) -> usize {
    cfg.mc.point.unwrap_or_else(|| match cfg.model.kind {
        ModelKind::Diffusion => (cfg.model.nx / 2) * cfg.model.ny + cfg.model.ny / 2,
        ModelKind::Synthetic => cfg.model.points / 2,
    })
}

fn open_cache<'a>(cfg: &RunConfig, built: &'a Built) -> Result<CachedModel<'a>, CliError> {
    if cfg.cache {
        CachedModel::open(built.model(), &cfg.out_dir.join("cache"), &cfg.model_hash(), &built.kl_hash(cfg))
    } else {
        Ok(CachedModel::ephemeral(built.model()))
    }
}

fn subdomain_file(id: usize) -> String {
    format!("dd/subdomain_{id:02}.json")
}

fn tau_tag(tau: f64) -> String {
    format!("tau_{tau:.6}")
}

/// Consecutive runs of `points` as half-open ranges.
fn index_ranges(points: &[usize]) -> Vec<[usize; 2]> {
    let mut out: Vec<[usize; 2]> = Vec::new();
    for &p in points {
        match out.last_mut() {
            Some(r) if r[1] == p => r[1] = p + 1,
            _ => out.push([p, p + 1]),
        }
    }
    out
}

/// Builds the KL basis, the full gPC and the DD reductions as configured.
pub fn run_offline(cfg: &RunConfig) -> Result<RunStats, CliError> {
    let out = &cfg.out_dir;
    ensure_dir(out)?;
    let built = Built::new(cfg)?;
    if let Some(kl) = built.kl() {
        write_json(&out.join("kl.json"), kl)?;
        write_with(&out.join("eigenvalues.csv"), |f| kl.write_eigenvalues_csv(f))?;
        info!("KL basis: {} modes, energy ratio {:.6}", kl.trunc_dim(), kl.energy_ratio);
    }
    let model = open_cache(cfg, &built)?;
    let d = cfg.stochastic.dim;
    let points = model.spatial_points().to_vec();
    let mut method_evaluations = 0u64;

    let full = if cfg.stochastic.full {
        let level = cfg.stochastic.effective_level();
        let degree = cfg.stochastic.degree;
        let rule = smolyak(d, level)?;
        info!("full gPC: d = {d}, N = {degree}, level {level}, {} nodes", rule.len());
        let e = GpcExpansion::project(&rule, degree, points.clone(), |xi| model.evaluate(xi))?;
        write_json(&out.join("gpc.json"), &e)?;
        method_evaluations += rule.len() as u64;
        Some(FullRecord {
            file: "gpc.json".into(),
            dim: d,
            degree,
            level,
            terms: e.num_terms(),
            evaluations: rule.len(),
        })
    } else {
        None
    };

    let dd = if cfg.dd.enabled {
        let s = &cfg.dd;
        let coarse_evaluations = smolyak(d, s.coarse_level)?.len();
        let u1 = coarse_solve(&model, s.coarse_level)?;
        write_json(&out.join("dd/coarse.json"), &u1)?;
        let part = built.partition(cfg)?;
        let settings = ReductionSettings {
            reduced_dim: s.reduced_dim,
            degree: s.degree,
            level: s.effective_level(),
        };
        info!("DD: {} subdomains, r = {}, coarse nodes {coarse_evaluations}", part.len(), s.reduced_dim);
        let reductions = reduce_all(&model, &u1, &part, settings)?;
        let mut records = Vec::with_capacity(reductions.len());
        for red in &reductions {
            let file = subdomain_file(red.id);
            write_json(&out.join(&file), red)?;
            records.push(SubdomainRecord {
                id: red.id,
                file,
                n_points: red.points.len(),
                ranges: index_ranges(&red.points),
                rank: red.kl.rank,
                energy_ratio: red.kl.energy_ratio,
                eigenvalues: red.kl.eigenvalues.clone(),
                evaluations: red.evaluations,
            });
        }
        write_json(
            &out.join("dd/manifest.json"),
            &DdManifest {
                layout: part.layout.clone(),
                subdomains: records,
            },
        )?;
        let local_evaluations: Vec<usize> = reductions.iter().map(|r| r.evaluations).collect();
        let total_evaluations = coarse_evaluations + local_evaluations.iter().sum::<usize>();
        method_evaluations += total_evaluations as u64;
        Some(DdRecord {
            manifest: "dd/manifest.json".into(),
            coarse_level: s.coarse_level,
            coarse_evaluations,
            subdomains: reductions.len(),
            reduced_dim: s.reduced_dim,
            degree: s.degree,
            level: s.effective_level(),
            local_evaluations,
            total_evaluations,
        })
    } else {
        None
    };

    model.save()?;
    let manifest = OfflineManifest {
        config_hash: cfg.offline_hash(),
        config: cfg.offline_view(),
        model_hash: cfg.model_hash(),
        kl_hash: built.kl_hash(cfg),
        error_definition: REL_ERROR_DEFINITION.into(),
        full,
        dd,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    let model_evaluations = model.evaluations();
    info!("offline done: {model_evaluations} model solves, {method_evaluations} charged evaluations");
    write_summary(out)?;
    Ok(RunStats {
        model_evaluations,
        method_evaluations,
    })
}

/// Offline artifacts checked against the configuration.
pub struct Artifacts {
    pub manifest: OfflineManifest,
    pub full: Option<GpcExpansion>,
    pub reductions: Option<Vec<SubdomainReduction>>,
}

impl Artifacts {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let out = &cfg.out_dir;
        let manifest: OfflineManifest = read_json(&out.join("manifest.json"))?;
        if manifest.config_hash != cfg.offline_hash() {
            let mut diff = json_diff(&manifest.config, &cfg.offline_view());
            if diff.is_empty() {
                diff.push(format!(
                    "config_hash: artifact {} vs config {}",
                    manifest.config_hash,
                    cfg.offline_hash()
                ));
            }
            return Err(CliError::ArtifactMismatch { diff });
        }
        let full = match &manifest.full {
            Some(r) => Some(read_json(&out.join(&r.file))?),
            None => None,
        };
        let reductions = match &manifest.dd {
            Some(r) => {
                let dd: DdManifest = read_json(&out.join(&r.manifest))?;
                let mut reds = Vec::with_capacity(dd.subdomains.len());
                for rec in &dd.subdomains {
                    reds.push(read_json::<SubdomainReduction>(&out.join(&rec.file))?);
                }
                Some(reds)
            }
            None => None,
        };
        Ok(Self {
            manifest,
            full,
            reductions,
        })
    }
}

/// Surrogate moment sweeps over `taus`.
pub struct SweepOutput {
    pub full: Vec<SweepRow>,
    pub dd: Vec<SweepRow>,
}

fn sweep_artifacts(cfg: &RunConfig, art: &Artifacts, taus: &[f64]) -> Result<SweepOutput, CliError> {
    let out = cfg.out_dir.join("online");
    let full = match &art.full {
        Some(e) => {
            let rows = tau_sweep(e, taus)?;
            write_sweep(&out.join("sweep.csv"), &rows)?;
            rows
        }
        None => Vec::new(),
    };
    let dd = match &art.reductions {
        Some(reds) => {
            let npts = cfg.num_points();
            let mut rows = Vec::with_capacity(taus.len());
            for &tau in taus {
                rows.push(SweepRow {
                    tau,
                    moments: dd_moments(npts, reds, tau)?,
                });
            }
            write_sweep(&out.join("sweep_dd.csv"), &rows)?;
            rows
        }
        None => Vec::new(),
    };
    Ok(SweepOutput { full, dd })
}

/// Moment sweep from the offline artifacts only; never evaluates the model.
pub fn run_sweep(cfg: &RunConfig) -> Result<RunStats, CliError> {
    let taus = &cfg.stochastic.taus;
    if taus.is_empty() {
        write_summary(&cfg.out_dir)?;
        return Ok(RunStats::default());
    }
    let art = Artifacts::load(cfg)?;
    sweep_artifacts(cfg, &art, taus)?;
    write_summary(&cfg.out_dir)?;
    Ok(RunStats::default())
}

/// Scalar surrogate `xi -> u_tau(point, xi)` for density sampling.
fn scalar_surrogate(e: &GpcExpansion, tau: f64, point: usize) -> Result<impl Fn(&[f64]) -> Result<f64, ModelError> + Sync + '_, CliError> {
    let scaled = rescale_matrix(e.dim(), e.max_degree(), tau)?.apply(e)?;
    let basis = scaled.basis();
    Ok(move |xi: &[f64]| {
        let psi = basis.values(xi).map_err(|err| ModelError::Other(err.to_string()))?;
        Ok(scaled.combine_at(point, &psi))
    })
}

fn write_density(
    out: &Path,
    tau: f64,
    source: &str,
    point_index: usize,
    est: &DensityEstimate,
) -> Result<DensityRecord, CliError> {
    let stem = format!("online/density/{}_{source}", tau_tag(tau));
    let histogram = format!("{stem}_histogram.csv");
    write_with(&out.join(&histogram), |f| est.write_histogram_csv(f))?;
    let pdf = if est.point_mass {
        None
    } else {
        let name = format!("{stem}_pdf.csv");
        write_with(&out.join(&name), |f| est.write_density_csv(f))?;
        Some(name)
    };
    Ok(DensityRecord {
        tau,
        source: source.into(),
        point_index,
        samples: est.samples.len() as u64,
        bandwidth: est.bandwidth,
        point_mass: est.point_mass,
        histogram,
        pdf,
    })
}

/// Online stage: sweeps, densities, optional validation and the report.
///
/// Without validation the model is never constructed, so no forward solve
/// can happen.
pub fn run_online(cfg: &RunConfig) -> Result<RunStats, CliError> {
    let out = &cfg.out_dir;
    let taus = cfg.stochastic.taus.clone();
    if taus.is_empty() {
        write_summary(out)?;
        return Ok(RunStats::default());
    }
    let art = Artifacts::load(cfg)?;
    let sweep = sweep_artifacts(cfg, &art, &taus)?;
    let point = density_point(cfg);
    let coords = art
        .full
        .as_ref()
        .map(|e| e.spatial_points()[point].clone())
        .or_else(|| {
            art.reductions.as_ref().and_then(|reds| {
                reds.iter()
                    .find_map(|r| r.points.iter().position(|&p| p == point).map(|k| r.expansion.spatial_points()[k].clone()))
            })
        })
        .unwrap_or_default();
    let mc = &cfg.mc;
    let mut results = OnlineResults {
        config_hash: art.manifest.config_hash.clone(),
        taus: taus.clone(),
        validation: format!("{:?}", mc.validate).to_lowercase(),
        error_definition: REL_ERROR_DEFINITION.into(),
        ..OnlineResults::default()
    };

    // Surrogate densities.
    let mut surrogate_samples: Vec<Vec<f64>> = Vec::with_capacity(taus.len());
    for &tau in &taus {
        let mut primary = None;
        if let Some(e) = &art.full {
            let f = scalar_surrogate(e, tau, point)?;
            let est = density_at_point(f, e.dim(), mc.density_samples, mc.seed, mc.bins, coords.clone())?;
            results.densities.push(write_density(out, tau, "surrogate", point, &est)?);
            primary = Some(est.samples);
        }
        if let Some(reds) = &art.reductions {
            if let Some((red, k)) = reds
                .iter()
                .find_map(|r| r.points.iter().position(|&p| p == point).map(|k| (r, k)))
            {
                let local = local_surrogate(red, 1.0)?;
                let f = scalar_surrogate(&local, tau, k)?;
                let est = density_at_point(f, local.dim(), mc.density_samples, mc.seed, mc.bins, coords.clone())?;
                results.densities.push(write_density(out, tau, "surrogate_dd", point, &est)?);
                primary.get_or_insert(est.samples);
            }
        }
        surrogate_samples.push(primary.unwrap_or_default());
    }

    let mut model_evaluations = 0;
    let mut method_evaluations = 0;
    if mc.validate != Validation::None {
        let built = Built::new(cfg)?;
        let model = open_cache(cfg, &built)?;
        let d = cfg.stochastic.dim;
        let npts = cfg.num_points();
        for (t, &tau) in taus.iter().enumerate() {
            let scaled = TauScaled::new(&model, tau);
            // Reference moments for the full and the DD surrogate.
            let (full_ref, dd_ref): (Option<Moments>, Option<Moments>) = match mc.validate {
                Validation::Direct => {
                    let full_ref = match &art.full {
                        Some(e) => {
                            let rule = smolyak(d, cfg.stochastic.effective_level())?;
                            method_evaluations += rule.len() as u64;
                            let direct = GpcExpansion::project(&rule, e.max_degree(), e.spatial_points().to_vec(), |xi| {
                                scaled.evaluate(xi)
                            })?;
                            Some(direct.moments())
                        }
                        None => None,
                    };
                    let dd_ref = match &art.reductions {
                        Some(reds) => {
                            let mut local = Vec::with_capacity(reds.len());
                            for red in reds {
                                let (e, n) = reduced_gpc(
                                    &scaled,
                                    &red.kl,
                                    &red.points,
                                    red.expansion.max_degree(),
                                    cfg.dd.effective_level(),
                                )?;
                                method_evaluations += n as u64;
                                local.push(e.moments());
                            }
                            let parts: Vec<(&[usize], &Moments)> =
                                reds.iter().zip(&local).map(|(r, m)| (r.points.as_slice(), m)).collect();
                            Some(assemble_global(npts, &parts)?)
                        }
                        None => None,
                    };
                    (full_ref, dd_ref)
                }
                Validation::Mc => {
                    let est = mc_moments(|xi| built.model().evaluate(xi), d, mc.samples, mc.seed, tau)?;
                    method_evaluations += mc.samples;
                    write_with(&out.join(format!("mc/{}.csv", tau_tag(tau))), |f| est.write_csv(f))?;
                    let m = Moments {
                        mean: est.mean,
                        variance: est.variance,
                    };
                    (Some(m.clone()), Some(m))
                }
                Validation::None => unreachable!(),
            };
            if let (Some(r), Some(row)) = (&full_ref, sweep.full.get(t)) {
                results.errors.push(ErrorRow::new(tau, &row.moments, r));
            }
            if let (Some(r), Some(row)) = (&dd_ref, sweep.dd.get(t)) {
                results.errors_dd.push(ErrorRow::new(tau, &row.moments, r));
            }

            // Density of the model itself at the same point.
            let direct = sample_scalar(
                |xi| Ok(scaled.evaluate(xi)?[point]),
                d,
                mc.density_samples,
                mc.seed,
            )?;
            method_evaluations += mc.density_samples;
            let est = DensityEstimate::from_samples(coords.clone(), direct, mc.bins)?;
            results.densities.push(write_density(out, tau, "direct", point, &est)?);
            if !surrogate_samples[t].is_empty() {
                results.ks_distances.push((tau, ks_distance(&surrogate_samples[t], &est.samples)));
            }
        }
        if !results.errors.is_empty() {
            write_errors(&out.join("online/errors.csv"), &results.errors)?;
        }
        if !results.errors_dd.is_empty() {
            write_errors(&out.join("online/errors_dd.csv"), &results.errors_dd)?;
        }
        model.save()?;
        model_evaluations = model.evaluations();
    }
    results.online_model_evaluations = model_evaluations;
    if mc.validate == Validation::None && model_evaluations != 0 {
        return Err(CliError::Invariant(format!(
            "online stage evaluated the model {model_evaluations} times without validation"
        )));
    }
    write_json(&out.join("online/results.json"), &results)?;
    write_summary(out)?;
    Ok(RunStats {
        model_evaluations,
        method_evaluations,
    })
}

/// Plain Monte Carlo moments of the model at every configured tau.
pub fn run_mc(cfg: &RunConfig) -> Result<RunStats, CliError> {
    let built = Built::new(cfg)?;
    let model = built.model();
    let mc = &cfg.mc;
    for &tau in &cfg.stochastic.taus {
        info!("Monte Carlo at tau = {tau}: {} samples", mc.samples);
        let est = mc_moments(|xi| model.evaluate(xi), cfg.stochastic.dim, mc.samples, mc.seed, tau)?;
        write_with(&cfg.out_dir.join(format!("mc/{}.csv", tau_tag(tau))), |f| est.write_csv(f))?;
    }
    write_summary(&cfg.out_dir)?;
    Ok(RunStats {
        model_evaluations: model.evaluations(),
        method_evaluations: mc.samples * cfg.stochastic.taus.len() as u64,
    })
}

/// Rewrites `summary.json` and the error tables from existing artifacts.
pub fn run_report(cfg: &RunConfig) -> Result<RunStats, CliError> {
    write_summary(&cfg.out_dir)?;
    Ok(RunStats::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_compress_runs() {
        assert_eq!(index_ranges(&[0, 1, 2, 5, 6, 9]), vec![[0, 3], [5, 7], [9, 10]]);
        assert!(index_ranges(&[]).is_empty());
    }

    #[test]
    fn tau_tags_are_fixed_width() {
        assert_eq!(tau_tag(0.5), "tau_0.500000");
        assert_eq!(tau_tag(1e-6), "tau_0.000001");
    }
}
