//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the
//! measured quantities, then asserts.

use std::io::Write;
use std::time::Instant;

use once_cell::sync::Lazy;

use euq_core::ddreduce::{coarse_solve, dd_moments, reduce_all, Partition, ReductionSettings};
use euq_core::epistemic::{rescale_matrix, tau_sweep};
use euq_core::mcref::mc_moments;
use euq_core::models::diffusion::{standard_log_mean, DiffusionProblem};
use euq_core::models::{DiffusionModel, Link, StochasticModel, SyntheticModel, TauScaled};
use euq_core::sparsegrid::smolyak;
use euq_core::{GpcExpansion, Moments};

fn report(criterion: u32, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    // Written to the process stdout directly so the line survives test capture.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {criterion}: {status} ({detail})");
}

fn max_rel_error(approx: &[f64], reference: &[f64]) -> f64 {
    approx
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / r.abs().max(1e-14))
        .fold(0.0, f64::max)
}

fn build<M: StochasticModel + ?Sized>(model: &M, degree: u32, level: u32) -> GpcExpansion {
    let rule = smolyak(model.stochastic_dim(), level).unwrap();
    GpcExpansion::project(&rule, degree, model.spatial_points().to_vec(), |xi| model.evaluate(xi)).unwrap()
}

fn surrogate_moments(e: &GpcExpansion, tau: f64) -> Moments {
    rescale_matrix(e.dim(), e.max_degree(), tau).unwrap().apply(e).unwrap().moments()
}

const DESK_NX: usize = 60;
const DESK_NY: usize = 15;
const DESK_D: usize = 6;
const DESK_N: u32 = 3;
const DESK_LEVEL: u32 = 5;

struct Desk {
    model: DiffusionModel,
    offline: GpcExpansion,
    offline_evaluations: u64,
}

static DESK: Lazy<Desk> = Lazy::new(|| {
    let model = DiffusionModel::standard_setup(DESK_NX, DESK_NY, DESK_D).unwrap();
    let offline = build(&model, DESK_N, DESK_LEVEL);
    let offline_evaluations = model.evaluations();
    Desk {
        model,
        offline,
        offline_evaluations,
    }
});

#[test]
fn criterion_1_sparse_grid_counts() {
    let cases = [(100, 2, 201), (10, 5, 8761), (10, 7, 162_025), (5, 7, 5593)];
    let got: Vec<usize> = cases.iter().map(|&(d, l, _)| smolyak(d, l).unwrap().len()).collect();
    let pass = cases.iter().zip(&got).all(|(c, &g)| c.2 == g);
    let detail = cases
        .iter()
        .zip(&got)
        .map(|(&(d, l, want), g)| format!("(d={d}, l={l}) -> {g} [want {want}]"))
        .collect::<Vec<_>>()
        .join(", ");
    report(1, pass, &detail);
    assert!(pass);
}

#[test]
fn criterion_2_rescale_operator_structure() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for dim in [1, 2, 4] {
        for n_max in [1, 3, 5] {
            let p = euq_core::polychaos::basis_size(dim, n_max);
            let identity = rescale_matrix(dim, n_max, 1.0).unwrap().to_dense();
            worst = worst.max((identity - nalgebra::DMatrix::<f64>::identity(p, p)).amax());
            for tau in [0.1, 0.5, 0.9] {
                let op = rescale_matrix(dim, n_max, tau).unwrap();
                let t = op.to_dense();
                for (a, n) in op.indices().iter().enumerate() {
                    for (b, m) in op.indices().iter().enumerate() {
                        let v = t[(a, b)];
                        if a == b {
                            worst = worst.max((v - tau.powi(m.total_degree() as i32)).abs());
                        }
                        let parity = n.entries().iter().zip(m.entries()).all(|(x, y)| x % 2 == y % 2);
                        if n.total_degree() > m.total_degree() || !parity {
                            worst = worst.max(v.abs());
                        }
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && elapsed < 1.0;
    report(2, pass, &format!("max structural deviation {worst:.2e}, {elapsed:.3} s"));
    assert!(pass);
}

#[test]
fn criterion_3_surrogate_matches_direct_build() {
    let (d, n_max) = (4, 4u32);
    let level = n_max + 2;
    let model = SyntheticModel::decaying(Link::Exp, d, 21, euq_core::models::diffusion::standard_sigma_max()).unwrap();
    let offline = build(&model, n_max, level);
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    let mut rows = Vec::new();
    for tau in [0.3, 0.6, 0.9] {
        let surrogate = surrogate_moments(&offline, tau);
        let direct = build(&TauScaled::new(&model, tau), n_max, level).moments();
        let em = max_rel_error(&surrogate.mean, &direct.mean);
        let ev = max_rel_error(&surrogate.variance, &direct.variance);
        worst_mean = worst_mean.max(em);
        worst_var = worst_var.max(ev);
        rows.push(format!("tau={tau}: mean {em:.2e}, variance {ev:.2e}"));
    }
    let pass = worst_mean <= 1e-8 && worst_var <= 1e-8;
    report(3, pass, &rows.join("; "));
    assert!(pass, "surrogate and direct gPC differ by more than 1e-8");
}

#[test]
fn criterion_4_desk_diffusion_trend() {
    let desk = &*DESK;
    let taus: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let mut errors = Vec::new();
    for &tau in &taus {
        let surrogate = surrogate_moments(&desk.offline, tau);
        let direct = build(&TauScaled::new(&desk.model, tau), DESK_N, DESK_LEVEL).moments();
        errors.push(max_rel_error(&surrogate.mean, &direct.mean));
    }
    let monotone = errors.windows(2).all(|w| w[1] <= w[0]);
    let last = *errors.last().unwrap();
    let pass = monotone && last <= 5e-3;
    let table = taus
        .iter()
        .zip(&errors)
        .map(|(t, e)| format!("{t}:{e:.2e}"))
        .collect::<Vec<_>>()
        .join(" ");
    report(4, pass, &format!("max rel mean error by tau {table}; monotone={monotone}"));
    assert!(pass);
}

#[test]
fn criterion_5_domain_decomposition() {
    let desk = &*DESK;
    let model = &desk.model;
    let u1 = coarse_solve(model, 2).unwrap();
    // node count rather than the shared counter, which other tests also bump
    let coarse_evals = smolyak(DESK_D, 2).unwrap().len();
    let problem = model.problem();
    let part = Partition::blocks_2d(model.spatial_points(), [0.0, 0.0], [problem.lx, problem.ly], 4, 2).unwrap();
    let settings = ReductionSettings {
        reduced_dim: 3,
        degree: 3,
        level: 5,
    };
    let reductions = reduce_all(model, &u1, &part, settings).unwrap();

    let mut orth: f64 = 0.0;
    for red in &reductions {
        let a = &red.kl.rotation;
        for i in 0..a.len() {
            for j in 0..a.len() {
                let dot: f64 = a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum();
                orth = orth.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    let global = dd_moments(model.spatial_points().len(), &reductions, 1.0).unwrap();
    let mean_err = max_rel_error(&global.mean, &desk.offline.moments().mean);

    let lambda = &model.kl().eigenvalues;
    let global_ratio = lambda[3] / lambda[0];
    let local_ratios: Vec<f64> = reductions
        .iter()
        .map(|r| r.kl.spectrum.get(3).copied().unwrap_or(0.0) / r.kl.spectrum[0])
        .collect();
    let decay = local_ratios.iter().all(|&r| r < global_ratio);
    let dd_evals = coarse_evals + reductions.iter().map(|r| r.evaluations).sum::<usize>();

    let pass = orth <= 1e-10 && mean_err <= 1e-2 && decay;
    let worst_local = local_ratios.iter().copied().fold(0.0, f64::max);
    report(
        5,
        pass,
        &format!(
            "(a) orthogonality {orth:.2e}; (b) DD vs full mean {mean_err:.2e}; (c) max mu4/mu1 {worst_local:.2e} vs lambda4/lambda1 {global_ratio:.2e}; evaluations DD {dd_evals} vs full {}",
            desk.offline_evaluations
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_monte_carlo_cross_check() {
    let d = 4;
    let model = SyntheticModel::decaying(Link::Exp, d, 11, euq_core::models::diffusion::standard_sigma_max()).unwrap();
    let exact = model.exact_moments(1.0);
    let gpc = build(&model, 3, 5).moments();
    let mc = mc_moments(|xi| model.evaluate(xi), d, 100_000, 20_240_601, 1.0).unwrap();
    let gpc_z = gpc
        .mean
        .iter()
        .zip(&exact.mean)
        .zip(&mc.std_error)
        .map(|((g, e), s)| (g - e).abs() / s)
        .fold(0.0, f64::max);
    let mc_z = mc
        .mean
        .iter()
        .zip(&exact.mean)
        .zip(&mc.std_error)
        .map(|((m, e), s)| (m - e).abs() / s)
        .fold(0.0, f64::max);
    let pass = gpc_z < 4.0 && mc_z < 4.0;
    report(
        6,
        pass,
        &format!("max |gPC - exact| = {gpc_z:.3} SE, max |MC - exact| = {mc_z:.3} SE"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_online_sweep_is_evaluation_free() {
    // own model instance: the shared fixture's counter is bumped by other tests
    let model = DiffusionModel::standard_setup(DESK_NX, DESK_NY, DESK_D).unwrap();
    let offline = build(&model, DESK_N, DESK_LEVEL);
    let taus: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let before = model.evaluations();
    let start = Instant::now();
    let rows = tau_sweep(&offline, &taus).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let evals = model.evaluations() - before;
    let pass = evals == 0 && elapsed < 1.0 && rows.len() == 9;
    report(7, pass, &format!("{evals} model evaluations, {elapsed:.4} s for 9 values"));
    assert!(pass);
}

/// Sink solution with constant conductivity on an `nx x ny` grid.
fn sink_solution(nx: usize, ny: usize) -> (DiffusionProblem, Vec<f64>) {
    let p = DiffusionProblem::with_grid(nx, ny);
    let u = p.solve(&vec![standard_log_mean(); p.num_cells()]).unwrap();
    (p, u)
}

#[test]
fn criterion_8_diffusion_solver() {
    // linear profile and maximum principle
    let flat = DiffusionProblem {
        sink: 0.0,
        ..DiffusionProblem::with_grid(40, 10)
    };
    let u = flat.solve(&vec![standard_log_mean(); flat.num_cells()]).unwrap();
    let linear_err = flat
        .cell_centers()
        .iter()
        .zip(&u)
        .map(|(x, v)| (v - (50.0 - 25.0 * x[0] / 240.0)).abs())
        .fold(0.0, f64::max);
    let model = DiffusionModel::standard_setup(40, 10, 8).unwrap();
    let mut max_principle = true;
    for k in 0..20u64 {
        let xi = euq_core::mcref::NormalStream::new(77).sample(k, 8);
        let a: Vec<f64> = model.kl().sample(&xi).unwrap();
        let v = flat.solve(&a).unwrap();
        max_principle &= v.iter().all(|&x| (25.0..=50.0).contains(&x));
    }

    // factor-3 refinement keeps the sink cell centered and coarse cell centers
    // on fine cell centers; compare away from the sink
    let grids = [(27, 9), (81, 27), (243, 81)];
    let sols: Vec<(DiffusionProblem, Vec<f64>)> = grids.iter().map(|&(nx, ny)| sink_solution(nx, ny)).collect();
    let (coarse, _) = &sols[0];
    let diff = |a: usize, b: usize| {
        let (pa, ua) = &sols[a];
        let (pb, ub) = &sols[b];
        let f = pb.nx / pa.nx;
        let mut worst: f64 = 0.0;
        for i0 in 0..coarse.nx {
            for j0 in 0..coarse.ny {
                let x = (i0 as f64 + 0.5) * coarse.hx();
                let y = (j0 as f64 + 0.5) * coarse.hy();
                if ((x - 120.0) / 240.0).abs() < 0.2 && ((y - 30.0) / 60.0).abs() < 0.2 {
                    continue;
                }
                let ia = (x / pa.hx()) as usize;
                let ja = (y / pa.hy()) as usize;
                let va = ua[pa.index(ia, ja)];
                let vb = ub[pb.index(ia * f + f / 2, ja * f + f / 2)];
                worst = worst.max((va - vb).abs());
            }
        }
        worst
    };
    let e1 = diff(0, 1);
    let e2 = diff(1, 2);
    let order = (e1 / e2).ln() / 3f64.ln();

    let pass = linear_err <= 1e-10 && max_principle && (1.8..=2.2).contains(&order);
    report(
        8,
        pass,
        &format!(
            "linear profile error {linear_err:.2e}; maximum principle {max_principle}; observed order {order:.3} (diffs {e1:.3e}, {e2:.3e})"
        ),
    );
    assert!(pass);
}
