//! Online stage: rescaling an aleatoric gPC expansion built at `sigma_max` to
//! the epistemic surrogate at `sigma = tau * sigma_max`.
//!
//! With `zeta = tau * xi` the offline expansion `sum_m u_m psi_m(zeta)` is
//! re-expanded in `psi_n(xi)`. The change-of-basis entries are
//! `T_{n,m} = E[psi_m(tau xi) psi_n(xi)] = prod_i t_{n_i, m_i}`, with the 1-D
//! factors computed exactly by Gauss-Hermite quadrature.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::par;
use crate::polychaos::{hermite_table, total_degree_indices, GpcExpansion, Moments, MultiIndex};
use crate::sparsegrid::gauss_hermite_1d;

/// Smallest accepted `tau`.
pub const TAU_MIN: f64 = 1e-6;

/// Accepts `tau` in `[1e-6, 1]`.
pub fn validate_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && (TAU_MIN..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::InvalidTau(tau))
    }
}

/// `t_{n,m} = integral psi_m(tau x) psi_n(x) w(x) dx` for `0 <= n, m <= N`.
pub fn rescale_matrix_1d(max_degree: u32, tau: f64) -> Result<DMatrix<f64>> {
    validate_tau(tau)?;
    let size = max_degree as usize + 1;
    if tau == 1.0 {
        return Ok(DMatrix::identity(size, size));
    }
    let (nodes, weights) = gauss_hermite_1d(size);
    let mut t = DMatrix::zeros(size, size);
    let mut at_x = vec![0.0; size];
    let mut at_tx = vec![0.0; size];
    for (&x, &w) in nodes.iter().zip(&weights) {
        hermite_table(x, &mut at_x);
        hermite_table(tau * x, &mut at_tx);
        for n in 0..size {
            for m in n..size {
                if (m - n) % 2 == 0 {
                    t[(n, m)] += w * at_tx[m] * at_x[n];
                }
            }
        }
    }
    Ok(t)
}

/// Sparse tensor-product rescale operator for a total-degree index set.
#[derive(Debug, Clone)]
pub struct RescaleOperator {
    tau: f64,
    dim: usize,
    max_degree: u32,
    indices: Vec<MultiIndex>,
    /// Row `n`: nonzero entries `(m, T_{n,m})`, `m` in ascending position.
    rows: Vec<Vec<(usize, f64)>>,
}

impl RescaleOperator {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn row(&self, n: usize) -> &[(usize, f64)] {
        &self.rows[n]
    }

    pub fn entry(&self, n: usize, m: usize) -> f64 {
        self.rows[n]
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.indices.len();
        let mut t = DMatrix::zeros(p, p);
        for (n, row) in self.rows.iter().enumerate() {
            for &(m, v) in row {
                t[(n, m)] = v;
            }
        }
        t
    }

    /// Surrogate coefficients `u^tau_n = sum_m T_{n,m} u_m`.
    pub fn apply(&self, e: &GpcExpansion) -> Result<GpcExpansion> {
        if e.dim() != self.dim || e.max_degree() != self.max_degree {
            return Err(Error::IndexSetMismatch(format!(
                "operator built for (d = {}, N = {}) applied to expansion with (d = {}, N = {})",
                self.dim,
                self.max_degree,
                e.dim(),
                e.max_degree()
            )));
        }
        let npts = e.num_points();
        let coeffs: Vec<Vec<f64>> = par::map_indexed(self.rows.len(), |n| {
            let mut out = vec![0.0; npts];
            for &(m, t) in &self.rows[n] {
                for (o, u) in out.iter_mut().zip(&e.coeffs()[m]) {
                    *o += t * u;
                }
            }
            out
        });
        GpcExpansion::from_coeffs(self.dim, self.max_degree, e.spatial_points().to_vec(), coeffs)
    }
}

/// Tensorized rescale operator `T^{d,tau}` over the canonical index set.
pub fn rescale_matrix(dim: usize, max_degree: u32, tau: f64) -> Result<RescaleOperator> {
    let t1 = rescale_matrix_1d(max_degree, tau)?;
    let indices = total_degree_indices(dim, max_degree);
    let position: HashMap<&MultiIndex, usize> = indices.iter().enumerate().map(|(k, m)| (m, k)).collect();
    let rows = indices
        .iter()
        .map(|n| {
            // m >= n componentwise with even differences and |m| <= N
            let mut row = Vec::new();
            let budget = (max_degree - n.total_degree()) / 2;
            let mut m = n.entries().to_vec();
            even_raises(&mut m, 0, budget, &mut |m| {
                let value: f64 = n
                    .entries()
                    .iter()
                    .zip(m.iter())
                    .map(|(&a, &b)| t1[(a as usize, b as usize)])
                    .product();
                let key = MultiIndex::new(m.to_vec());
                row.push((position[&key], value));
            });
            row.sort_by_key(|&(k, _)| k);
            row
        })
        .collect();
    Ok(RescaleOperator {
        tau,
        dim,
        max_degree,
        indices,
        rows,
    })
}

/// Visits every `m` obtained from `m` by adding `2 k_i` to coordinate `i`
/// with `sum k_i <= budget`.
fn even_raises<F: FnMut(&[u32])>(m: &mut [u32], pos: usize, budget: u32, f: &mut F) {
    if pos == m.len() {
        f(m);
        return;
    }
    let base = m[pos];
    for k in 0..=budget {
        m[pos] = base + 2 * k;
        even_raises(m, pos + 1, budget - k, f);
    }
    m[pos] = base;
}

/// Rescales the offline expansion to `op.tau()`.
pub fn surrogate_coeffs(e: &GpcExpansion, op: &RescaleOperator) -> Result<GpcExpansion> {
    op.apply(e)
}

/// Mean and variance of a rescaled expansion.
pub fn surrogate_moments(e: &GpcExpansion) -> Moments {
    e.moments()
}

/// One draw of the surrogate at `tau`: the rescaled expansion evaluated at a
/// standard normal `xi`.
pub fn surrogate_sample(e: &GpcExpansion, tau: f64, xi: &[f64]) -> Result<Vec<f64>> {
    validate_tau(tau)?;
    e.eval(xi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub moments: Moments,
}

/// Surrogate moments for each `tau`. All values are validated before any
/// work; the sweep itself only touches gPC coefficients.
pub fn tau_sweep(e: &GpcExpansion, taus: &[f64]) -> Result<Vec<SweepRow>> {
    for &tau in taus {
        validate_tau(tau)?;
    }
    let rows = par::try_map_indexed(taus.len(), |k| {
        let tau = taus[k];
        let op = rescale_matrix(e.dim(), e.max_degree(), tau)?;
        let moments = op.apply(e)?.moments();
        Ok::<_, Error>(SweepRow { tau, moments })
    })?;
    Ok(rows)
}
