//! Domain-decomposition dimension reduction.
//!
//! A degree-1 gPC solution `u_1` in all `d` variables (the coarse solve)
//! gives the covariance of the QoI restricted to each subdomain. Its leading
//! `r` eigenvectors in stochastic space form the orthonormal columns of
//! `A^s`; the subdomain QoI is then expanded in the `r` variables `eta` with
//! `xi = A^s eta`, which needs far fewer model evaluations than a full
//! `d`-dimensional sparse grid.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::epistemic::rescale_matrix;
use crate::error::{Error, Result};
use crate::models::StochasticModel;
use crate::par;
use crate::polychaos::{GpcExpansion, Moments, MultiIndex, Point};
use crate::randfield::fix_sign;
use crate::sparsegrid::smolyak;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layout {
    /// Equal intervals of `[lo, hi]` along the first coordinate.
    Intervals { lo: f64, hi: f64, count: usize },
    /// `p x q` blocks of `[x0, x1] x [y0, y1]`; subdomain `s = iy * p + ix`.
    Blocks {
        lo: [f64; 2],
        hi: [f64; 2],
        p: usize,
        q: usize,
    },
    Custom,
}

/// Disjoint cover of the spatial points by non-empty subdomains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub layout: Layout,
    pub subdomains: Vec<Vec<usize>>,
}

/// Block index of `v` in `count` equal cells of `[lo, hi]`; values on an
/// interior cell boundary go to the lower cell.
fn cell_of(v: f64, lo: f64, hi: f64, count: usize) -> usize {
    let t = (v - lo) / (hi - lo) * count as f64;
    (t.ceil() as isize - 1).clamp(0, count as isize - 1) as usize
}

impl Partition {
    pub fn intervals_1d(points: &[Point], lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(hi > lo) {
            return Err(Error::InvalidParameter("interval partition needs count >= 1 and hi > lo".into()));
        }
        let mut subdomains = vec![Vec::new(); count];
        for (k, x) in points.iter().enumerate() {
            subdomains[cell_of(x[0], lo, hi, count)].push(k);
        }
        Self::checked(Layout::Intervals { lo, hi, count }, subdomains, points.len())
    }

    pub fn blocks_2d(points: &[Point], lo: [f64; 2], hi: [f64; 2], p: usize, q: usize) -> Result<Self> {
        if p == 0 || q == 0 || !(hi[0] > lo[0] && hi[1] > lo[1]) {
            return Err(Error::InvalidParameter("block partition needs p, q >= 1 and a non-empty box".into()));
        }
        let mut subdomains = vec![Vec::new(); p * q];
        for (k, x) in points.iter().enumerate() {
            if x.len() < 2 {
                return Err(Error::DimensionMismatch { expected: 2, got: x.len() });
            }
            let ix = cell_of(x[0], lo[0], hi[0], p);
            let iy = cell_of(x[1], lo[1], hi[1], q);
            subdomains[iy * p + ix].push(k);
        }
        Self::checked(Layout::Blocks { lo, hi, p, q }, subdomains, points.len())
    }

    /// Arbitrary index sets; checked for exact coverage of `0..npts`.
    pub fn from_sets(sets: Vec<Vec<usize>>, npts: usize) -> Result<Self> {
        Self::checked(Layout::Custom, sets, npts)
    }

    fn checked(layout: Layout, subdomains: Vec<Vec<usize>>, npts: usize) -> Result<Self> {
        if let Some(s) = subdomains.iter().position(Vec::is_empty) {
            return Err(Error::InvalidParameter(format!("subdomain {s} contains no points")));
        }
        check_coverage(subdomains.iter().map(Vec::as_slice), npts)?;
        Ok(Self { layout, subdomains })
    }

    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }
}

fn check_coverage<'a>(sets: impl Iterator<Item = &'a [usize]>, npts: usize) -> Result<()> {
    let mut seen = vec![0u32; npts];
    let mut out_of_range = Vec::new();
    for set in sets {
        for &k in set {
            match seen.get_mut(k) {
                Some(c) => *c += 1,
                None => out_of_range.push(k),
            }
        }
    }
    let uncovered: Vec<usize> = (0..npts).filter(|&k| seen[k] == 0).collect();
    let mut repeated: Vec<usize> = (0..npts).filter(|&k| seen[k] > 1).collect();
    repeated.extend(out_of_range);
    if uncovered.is_empty() && repeated.is_empty() {
        Ok(())
    } else {
        Err(Error::Coverage { uncovered, repeated })
    }
}

/// Degree-1 gPC in all `d` variables from the sparse grid of `level`.
pub fn coarse_solve<M: StochasticModel + ?Sized>(model: &M, level: u32) -> Result<GpcExpansion> {
    if level < 2 {
        return Err(Error::InvalidParameter(format!(
            "coarse solve needs level >= 2 (got {level})"
        )));
    }
    let rule = smolyak(model.stochastic_dim(), level)?;
    GpcExpansion::project(&rule, 1, model.spatial_points().to_vec(), |xi| model.evaluate(xi))
}

/// Local KL of the coarse solution on one subdomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdomainKl {
    /// `mu_1 >= ... >= mu_r`.
    pub eigenvalues: Vec<f64>,
    /// All nonzero-rank eigenvalues (for decay diagnostics).
    pub spectrum: Vec<f64>,
    /// `b_i` at the subdomain points, unit norm under the weight `1/n_s`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Columns of `A^s`, each of length `d`.
    pub rotation: Vec<Vec<f64>>,
    /// `sum_{i<=r} mu_i / sum_i mu_i`.
    pub energy_ratio: f64,
    pub rank: usize,
}

impl SubdomainKl {
    /// `xi = A eta`.
    pub fn to_full(&self, eta: &[f64]) -> Vec<f64> {
        let d = self.rotation.first().map_or(0, Vec::len);
        let mut xi = vec![0.0; d];
        for (col, &e) in self.rotation.iter().zip(eta) {
            for (x, a) in xi.iter_mut().zip(col) {
                *x += a * e;
            }
        }
        xi
    }

    pub fn reduced_dim(&self) -> usize {
        self.rotation.len()
    }
}

/// Eigenpairs of `C(x, y) = sum_{|n|=1} u_n(x) u_n(y)` on subdomain `s`,
/// computed from the SVD of the weighted `(points x d)` matrix of degree-1
/// coefficients: right singular vectors are the columns of `A^s`, squared
/// singular values are `mu`.
pub fn subdomain_kl(u1: &GpcExpansion, part: &Partition, s: usize, r: usize) -> Result<SubdomainKl> {
    let points = part
        .subdomains
        .get(s)
        .ok_or_else(|| Error::InvalidParameter(format!("no subdomain {s}")))?;
    let d = u1.dim();
    if r == 0 || r > d || r > points.len() {
        return Err(Error::InvalidParameter(format!(
            "reduced dimension r = {r} must satisfy 1 <= r <= min(d = {d}, n_s = {})",
            points.len()
        )));
    }
    let cols: Vec<&[f64]> = (0..d)
        .map(|j| {
            u1.coeff(&MultiIndex::unit(d, j))
                .ok_or_else(|| Error::IndexSetMismatch("coarse expansion lacks degree-1 terms".into()))
        })
        .collect::<Result<_>>()?;
    let ns = points.len();
    let w = 1.0 / ns as f64;
    let sw = w.sqrt();
    let m = DMatrix::from_fn(ns, d, |p, j| sw * cols[j][points[p]]);
    let svd = m.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Linalg("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let sv: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let s1 = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&v| v > RANK_TOL * s1 && v > 0.0).count();
    if r > rank {
        return Err(Error::RankDeficient { requested: r, rank });
    }
    let spectrum: Vec<f64> = sv[..rank].iter().map(|v| v * v).collect();
    let total: f64 = spectrum.iter().sum();
    let mut rotation = Vec::with_capacity(r);
    let mut eigenvectors = Vec::with_capacity(r);
    for (i, &k) in order[..r].iter().enumerate() {
        let mut a: Vec<f64> = v_t.row(k).iter().copied().collect();
        fix_sign(&mut a);
        // b_i = M a / (sigma_i sqrt(w)), unit under the weight w
        let av = nalgebra::DVector::from_column_slice(&a);
        let b: Vec<f64> = (&m * av).iter().map(|v| v / (sv[i] * sw)).collect();
        rotation.push(a);
        eigenvectors.push(b);
    }
    let eigenvalues = spectrum[..r].to_vec();
    Ok(SubdomainKl {
        energy_ratio: eigenvalues.iter().sum::<f64>() / total,
        eigenvalues,
        spectrum,
        eigenvectors,
        rotation,
        rank,
    })
}

/// Reduced-dimension pipeline output for one subdomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdomainReduction {
    pub id: usize,
    /// Global indices of the subdomain's spatial points.
    pub points: Vec<usize>,
    pub kl: SubdomainKl,
    /// Expansion in `r` variables over the subdomain's points.
    pub expansion: GpcExpansion,
    /// Number of model evaluations used to assemble `expansion`.
    pub evaluations: usize,
}

/// Local gPC in `eta` of degree `degree` from the `r`-dimensional sparse grid
/// of `level`: the model is evaluated at `xi = A eta` and restricted to the
/// subdomain points.
pub fn reduced_gpc<M: StochasticModel + ?Sized>(
    model: &M,
    kl: &SubdomainKl,
    points: &[usize],
    degree: u32,
    level: u32,
) -> Result<(GpcExpansion, usize)> {
    let rule = smolyak(kl.reduced_dim(), level)?;
    let coords: Vec<Point> = points.iter().map(|&p| model.spatial_points()[p].clone()).collect();
    let e = GpcExpansion::project(&rule, degree, coords, |eta| {
        let u = model.evaluate(&kl.to_full(eta))?;
        Ok(points.iter().map(|&p| u[p]).collect())
    })?;
    Ok((e, rule.len()))
}

/// Local epistemic surrogate: the local expansion rescaled to `tau`.
pub fn local_surrogate(red: &SubdomainReduction, tau: f64) -> Result<GpcExpansion> {
    let e = &red.expansion;
    rescale_matrix(e.dim(), e.max_degree(), tau)?.apply(e)
}

/// Settings of the per-subdomain stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionSettings {
    pub reduced_dim: usize,
    pub degree: u32,
    pub level: u32,
}

/// Runs [`subdomain_kl`] and [`reduced_gpc`] on every subdomain. Subdomains
/// are processed concurrently; results are in subdomain order.
pub fn reduce_all<M: StochasticModel + ?Sized>(
    model: &M,
    u1: &GpcExpansion,
    part: &Partition,
    settings: ReductionSettings,
) -> Result<Vec<SubdomainReduction>> {
    par::try_map_indexed(part.len(), |s| {
        let kl = subdomain_kl(u1, part, s, settings.reduced_dim)?;
        let points = part.subdomains[s].clone();
        let (expansion, evaluations) = reduced_gpc(model, &kl, &points, settings.degree, settings.level)?;
        Ok(SubdomainReduction {
            id: s,
            points,
            kl,
            expansion,
            evaluations,
        })
    })
}

/// Concatenates subdomain moments into global fields. Every one of the
/// `npts` points must be covered exactly once.
pub fn assemble_global(npts: usize, parts: &[(&[usize], &Moments)]) -> Result<Moments> {
    check_coverage(parts.iter().map(|(p, _)| *p), npts)?;
    let mut mean = vec![0.0; npts];
    let mut variance = vec![0.0; npts];
    for (points, m) in parts {
        if m.mean.len() != points.len() || m.variance.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: m.mean.len(),
            });
        }
        for (k, &p) in points.iter().enumerate() {
            mean[p] = m.mean[k];
            variance[p] = m.variance[k];
        }
    }
    Ok(Moments { mean, variance })
}

/// Global DD moments at `tau` from all subdomain reductions.
pub fn dd_moments(npts: usize, reductions: &[SubdomainReduction], tau: f64) -> Result<Moments> {
    let local: Vec<Moments> = par::try_map_indexed(reductions.len(), |s| {
        Ok::<_, Error>(local_surrogate(&reductions[s], tau)?.moments())
    })?;
    let parts: Vec<(&[usize], &Moments)> = reductions
        .iter()
        .zip(&local)
        .map(|(r, m)| (r.points.as_slice(), m))
        .collect();
    assemble_global(npts, &parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Link, SyntheticModel, TauScaled};
    use approx::assert_abs_diff_eq;

    fn grid_points(nx: usize, ny: usize) -> Vec<Point> {
        let mut pts = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                pts.push(vec![(i as f64 + 0.5) / nx as f64, (j as f64 + 0.5) / ny as f64]);
            }
        }
        pts
    }

    #[test]
    fn block_partition_layout() {
        let pts = grid_points(8, 4);
        let part = Partition::blocks_2d(&pts, [0.0, 0.0], [1.0, 1.0], 4, 2).unwrap();
        assert_eq!(part.len(), 8);
        assert!(part.subdomains.iter().all(|s| s.len() == 4));
        // first block holds x < 0.25, y < 0.5
        for &k in &part.subdomains[0] {
            assert!(pts[k][0] < 0.25 && pts[k][1] < 0.5);
        }
        for &k in &part.subdomains[5] {
            assert!(pts[k][0] > 0.25 && pts[k][0] < 0.5 && pts[k][1] > 0.5);
        }
    }

    #[test]
    fn boundary_points_go_to_lower_block() {
        let pts = vec![vec![0.0], vec![0.5], vec![0.75], vec![1.0]];
        let part = Partition::intervals_1d(&pts, 0.0, 1.0, 2).unwrap();
        assert_eq!(part.subdomains, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn coverage_errors() {
        assert!(matches!(
            Partition::from_sets(vec![vec![0, 1], vec![1, 3]], 4),
            Err(Error::Coverage { uncovered, repeated }) if uncovered == vec![2] && repeated == vec![1]
        ));
        assert!(Partition::from_sets(vec![vec![0], vec![]], 1).is_err());
        assert!(Partition::from_sets(vec![vec![1, 0]], 2).is_ok());
        let m = Moments {
            mean: vec![1.0],
            variance: vec![0.0],
        };
        assert!(matches!(
            assemble_global(2, &[(&[0], &m)]),
            Err(Error::Coverage { uncovered, .. }) if uncovered == vec![1]
        ));
    }

    #[test]
    fn coarse_solve_of_linear_model_is_exact() {
        let m = SyntheticModel::decaying(Link::Identity, 5, 6, 0.7).unwrap();
        let u1 = coarse_solve(&m, 2).unwrap();
        assert_eq!(m.evaluations(), 11);
        for p in 0..6 {
            assert_abs_diff_eq!(u1.coeffs()[0][p], m.c0()[p], epsilon = 1e-12);
            for j in 0..5 {
                let c = u1.coeff(&MultiIndex::unit(5, j)).unwrap()[p];
                assert_abs_diff_eq!(c, m.coefficients()[j][p], epsilon = 1e-12);
            }
        }
        let constant = SyntheticModel::new(Link::Identity, vec![vec![0.0]], vec![4.0], vec![vec![0.0]; 3]).unwrap();
        let u1 = coarse_solve(&constant, 2).unwrap();
        assert_eq!(u1.coeffs()[0][0], 4.0);
        assert!(u1.coeffs()[1..].iter().all(|c| c[0] == 0.0));
        assert!(coarse_solve(&constant, 1).is_err());
    }

    #[test]
    fn rank_one_subdomain() {
        let pts: Vec<Point> = (0..5).map(|k| vec![k as f64]).collect();
        let mut u1 = GpcExpansion::zeros(3, 1, pts);
        let pos = u1.position(&MultiIndex::unit(3, 1)).unwrap();
        u1.coeffs_mut()[pos] = vec![1.0, -2.0, 0.5, 3.0, 1.0];
        let part = Partition::from_sets(vec![(0..5).collect()], 5).unwrap();
        let kl = subdomain_kl(&u1, &part, 0, 1).unwrap();
        assert_eq!(kl.rank, 1);
        assert_abs_diff_eq!(kl.rotation[0][1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(kl.rotation[0][0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(kl.eigenvalues[0], (1.0 + 4.0 + 0.25 + 9.0 + 1.0) / 5.0, epsilon = 1e-12);
        assert!(matches!(
            subdomain_kl(&u1, &part, 0, 2),
            Err(Error::RankDeficient { requested: 2, rank: 1 })
        ));
    }

    #[test]
    fn subdomain_spectral_identity_and_orthogonality() {
        let m = SyntheticModel::decaying(Link::Exp, 6, 40, 0.5).unwrap();
        let u1 = coarse_solve(&m, 2).unwrap();
        let part = Partition::intervals_1d(m.spatial_points(), 0.0, 1.0, 3).unwrap();
        for s in 0..3 {
            let kl = subdomain_kl(&u1, &part, s, 6).unwrap();
            let pts = &part.subdomains[s];
            for (a, &x) in pts.iter().enumerate() {
                for (b, &y) in pts.iter().enumerate() {
                    let rec: f64 = (0..6)
                        .map(|i| kl.eigenvalues[i] * kl.eigenvectors[i][a] * kl.eigenvectors[i][b])
                        .sum();
                    let exact: f64 = (0..6)
                        .map(|j| {
                            let c = u1.coeff(&MultiIndex::unit(6, j)).unwrap();
                            c[x] * c[y]
                        })
                        .sum();
                    assert!((rec - exact).abs() < 1e-8);
                }
            }
            for i in 0..6 {
                for j in 0..6 {
                    let dot: f64 = kl.rotation[i].iter().zip(&kl.rotation[j]).map(|(a, b)| a * b).sum();
                    assert_abs_diff_eq!(dot, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-10);
                }
            }
            assert!(kl.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn reduced_gpc_reproduces_linear_model() {
        let m = SyntheticModel::decaying(Link::Identity, 6, 30, 0.6).unwrap();
        let u1 = coarse_solve(&m, 2).unwrap();
        let part = Partition::intervals_1d(m.spatial_points(), 0.0, 1.0, 3).unwrap();
        let settings = ReductionSettings {
            reduced_dim: 2,
            degree: 1,
            level: 3,
        };
        // a linear model restricted to a subdomain has rank <= 6; with r < rank
        // the reduced expansion is only a projection, so use the full rank
        let full = ReductionSettings { reduced_dim: 6, ..settings };
        let reds = reduce_all(&m, &u1, &part, full).unwrap();
        let exact = m.exact_moments(1.0);
        for red in &reds {
            let mom = red.expansion.moments();
            for (k, &p) in red.points.iter().enumerate() {
                assert_abs_diff_eq!(mom.mean[k], exact.mean[p], epsilon = 1e-12);
                assert_abs_diff_eq!(mom.variance[k], exact.variance[p], epsilon = 1e-12);
            }
            // evaluating the local expansion at eta reproduces u(A eta)
            let eta = [0.3, -1.2, 0.8, 0.1, 0.0, 2.0];
            let local = red.expansion.eval(&eta).unwrap();
            let direct = m.evaluate(&red.kl.to_full(&eta)).unwrap();
            for (k, &p) in red.points.iter().enumerate() {
                assert_abs_diff_eq!(local[k], direct[p], epsilon = 1e-11);
            }
        }
        assert!(reduce_all(&m, &u1, &part, settings).is_ok());
    }

    #[test]
    fn local_surrogate_matches_direct_reduced_build() {
        let m = SyntheticModel::decaying(Link::Identity, 4, 12, 0.6).unwrap();
        let u1 = coarse_solve(&m, 2).unwrap();
        let part = Partition::intervals_1d(m.spatial_points(), 0.0, 1.0, 2).unwrap();
        let settings = ReductionSettings {
            reduced_dim: 2,
            degree: 3,
            level: 5,
        };
        let reds = reduce_all(&m, &u1, &part, settings).unwrap();
        for tau in [0.3, 0.8] {
            let scaled = TauScaled::new(&m, tau);
            for red in &reds {
                let surrogate = local_surrogate(red, tau).unwrap();
                let (direct, _) = reduced_gpc(&scaled, &red.kl, &red.points, 3, 5).unwrap();
                for (a, b) in surrogate.coeffs().iter().flatten().zip(direct.coeffs().iter().flatten()) {
                    assert!((a - b).abs() < 1e-8);
                }
            }
        }
        let unchanged = local_surrogate(&reds[0], 1.0).unwrap();
        assert_eq!(unchanged, reds[0].expansion);
    }

    #[test]
    fn assembly_is_order_independent() {
        let m = SyntheticModel::decaying(Link::Exp, 3, 20, 0.5).unwrap();
        let u1 = coarse_solve(&m, 2).unwrap();
        let part = Partition::intervals_1d(m.spatial_points(), 0.0, 1.0, 4).unwrap();
        let settings = ReductionSettings {
            reduced_dim: 2,
            degree: 2,
            level: 4,
        };
        let mut reds = reduce_all(&m, &u1, &part, settings).unwrap();
        let a = dd_moments(20, &reds, 0.7).unwrap();
        reds.reverse();
        let b = dd_moments(20, &reds, 0.7).unwrap();
        assert_eq!(a, b);

        let single = Partition::from_sets(vec![(0..20).collect()], 20).unwrap();
        let reds = reduce_all(&m, &u1, &single, settings).unwrap();
        let global = dd_moments(20, &reds, 1.0).unwrap();
        assert_eq!(global, reds[0].expansion.moments());
    }
}
