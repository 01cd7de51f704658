//! Total-degree tensor Hermite chaos.
//!
//! Basis polynomials are the probabilists' Hermite polynomials normalized to
//! be orthonormal under the standard Gaussian measure, tensorized over a
//! total-degree multi-index set. Expansions carry one coefficient vector per
//! multi-index, with one entry per spatial evaluation point of the quantity of
//! interest.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, ModelError, Result};
use crate::par;
use crate::sparsegrid::QuadratureRule;

/// A spatial location of the quantity of interest (1-D angle, 2-D node, ...).
pub type Point = Vec<f64>;

/// Multi-index `(n_1, ..., n_d)` of a tensor Hermite polynomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    entries: Vec<u32>,
}

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        Self { entries }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            entries: vec![0; dim],
        }
    }

    /// The Euclidean unit index `e_j`.
    pub fn unit(dim: usize, j: usize) -> Self {
        let mut entries = vec![0; dim];
        entries[j] = 1;
        Self { entries }
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.entries.iter().sum()
    }

    /// Nonzero `(coordinate, degree)` pairs.
    pub fn support(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(i, &n)| (i, n))
    }

    /// True when every entry is even.
    pub fn is_even(&self) -> bool {
        self.entries.iter().all(|n| n % 2 == 0)
    }
}

/// All multi-indices of dimension `dim` with total degree at most
/// `max_degree`, graded by total degree and, within a degree, in descending
/// lexicographic order. The zero index comes first; for `d = 2, N = 1` the
/// order is `(0,0), (1,0), (0,1)`.
pub fn total_degree_indices(dim: usize, max_degree: u32) -> Vec<MultiIndex> {
    let mut out = Vec::with_capacity(basis_size(dim, max_degree));
    let mut scratch = vec![0u32; dim];
    for degree in 0..=max_degree {
        compositions(&mut scratch, 0, degree, &mut out);
    }
    out
}

fn compositions(scratch: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == scratch.len() {
        scratch[pos] = remaining;
        out.push(MultiIndex::new(scratch.to_vec()));
        return;
    }
    if scratch.is_empty() {
        return;
    }
    for first in (0..=remaining).rev() {
        scratch[pos] = first;
        compositions(scratch, pos + 1, remaining - first, out);
    }
    scratch[pos] = 0;
}

/// `binomial(dim + max_degree, max_degree)`, the size of the total-degree set.
pub fn basis_size(dim: usize, max_degree: u32) -> usize {
    let n = max_degree as u128;
    let mut acc: u128 = 1;
    for k in 1..=n {
        acc = acc * (dim as u128 + k) / k;
    }
    acc as usize
}

/// Orthonormal probabilists' Hermite polynomial `psi_n(x)`, via
/// `psi_{k+1} = (x psi_k - sqrt(k) psi_{k-1}) / sqrt(k+1)`.
pub fn hermite_eval(n: u32, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let kf = k as f64;
        let next = (x * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

/// Writes `psi_0(x), ..., psi_{out.len()-1}(x)` into `out`.
pub fn hermite_table(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
    }
}

/// `prod_i psi_{n_i}(xi_i)`.
pub fn tensor_poly_eval(index: &MultiIndex, xi: &[f64]) -> Result<f64> {
    check_dim(index.dim(), xi.len())?;
    Ok(index
        .support()
        .map(|(i, n)| hermite_eval(n, xi[i]))
        .product())
}

/// Evaluates every basis polynomial of an index set at one point.
#[derive(Debug, Clone)]
pub struct BasisEvaluator {
    dim: usize,
    max_degree: u32,
    supports: Vec<Vec<(usize, u32)>>,
}

impl BasisEvaluator {
    pub fn new(dim: usize, max_degree: u32, indices: &[MultiIndex]) -> Self {
        Self {
            dim,
            max_degree,
            supports: indices.iter().map(|m| m.support().collect()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    /// Fills `out[k] = psi_{n_k}(xi)`.
    pub fn values_into(&self, xi: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim, xi.len())?;
        let width = self.max_degree as usize + 1;
        let mut table = vec![0.0; self.dim * width];
        for (i, &x) in xi.iter().enumerate() {
            hermite_table(x, &mut table[i * width..(i + 1) * width]);
        }
        for (slot, support) in out.iter_mut().zip(&self.supports) {
            *slot = support
                .iter()
                .map(|&(i, n)| table[i * width + n as usize])
                .product();
        }
        Ok(())
    }

    pub fn values(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.values_into(xi, &mut out)?;
        Ok(out)
    }
}

/// Pointwise mean and variance fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Moments {
    pub fn std_dev(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }
}

/// Truncated gPC expansion `u_N(x, xi) = sum_{|n| <= N} u_n(x) psi_n(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExpansionDoc", into = "ExpansionDoc")]
pub struct GpcExpansion {
    dim: usize,
    max_degree: u32,
    indices: Vec<MultiIndex>,
    spatial_points: Vec<Point>,
    coeffs: Vec<Vec<f64>>,
}

impl GpcExpansion {
    /// Expansion with all coefficients zero.
    pub fn zeros(dim: usize, max_degree: u32, spatial_points: Vec<Point>) -> Self {
        let indices = total_degree_indices(dim, max_degree);
        let coeffs = vec![vec![0.0; spatial_points.len()]; indices.len()];
        Self {
            dim,
            max_degree,
            indices,
            spatial_points,
            coeffs,
        }
    }

    /// Expansion from coefficient vectors listed in canonical index order.
    pub fn from_coeffs(
        dim: usize,
        max_degree: u32,
        spatial_points: Vec<Point>,
        coeffs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let indices = total_degree_indices(dim, max_degree);
        if coeffs.len() != indices.len() {
            return Err(Error::IndexSetMismatch(format!(
                "{} coefficient vectors for {} basis polynomials",
                coeffs.len(),
                indices.len()
            )));
        }
        for c in &coeffs {
            check_dim(spatial_points.len(), c.len())?;
        }
        Ok(Self {
            dim,
            max_degree,
            indices,
            spatial_points,
            coeffs,
        })
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

    pub fn spatial_points(&self) -> &[Point] {
        &self.spatial_points
    }

    pub fn num_points(&self) -> usize {
        self.spatial_points.len()
    }

    pub fn num_terms(&self) -> usize {
        self.indices.len()
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.coeffs
    }

    /// Coefficient vector of a given multi-index, if present.
    pub fn coeff(&self, index: &MultiIndex) -> Option<&[f64]> {
        self.position(index).map(|k| self.coeffs[k].as_slice())
    }

    pub fn position(&self, index: &MultiIndex) -> Option<usize> {
        self.indices.iter().position(|m| m == index)
    }

    /// Map from multi-index to its position in canonical order.
    pub fn position_map(&self) -> HashMap<&MultiIndex, usize> {
        self.indices.iter().enumerate().map(|(k, m)| (m, k)).collect()
    }

    pub fn basis(&self) -> BasisEvaluator {
        BasisEvaluator::new(self.dim, self.max_degree, &self.indices)
    }

    /// Evaluates the expansion at `xi` for every spatial point.
    pub fn eval(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let psi = self.basis().values(xi)?;
        Ok(self.combine(&psi))
    }

    /// `sum_k psi[k] * u_k(x)` for every spatial point.
    pub fn combine(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_points()];
        for (coeff, &p) in self.coeffs.iter().zip(psi) {
            if p == 0.0 {
                continue;
            }
            for (o, c) in out.iter_mut().zip(coeff) {
                *o += p * c;
            }
        }
        out
    }

    /// `sum_k psi[k] * u_k(x_point)` at a single spatial point.
    pub fn combine_at(&self, point: usize, psi: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(psi)
            .map(|(c, p)| c[point] * p)
            .sum()
    }

    /// Mean `u_0` and variance `sum_{|n| >= 1} u_n^2`.
    pub fn moments(&self) -> Moments {
        let mean = self.coeffs[0].clone();
        let mut variance = vec![0.0; self.num_points()];
        for coeff in &self.coeffs[1..] {
            for (v, c) in variance.iter_mut().zip(coeff) {
                *v += c * c;
            }
        }
        Moments { mean, variance }
    }

    /// Expansion restricted to a subset of spatial points (in the given order).
    pub fn restrict(&self, points: &[usize]) -> Self {
        Self {
            dim: self.dim,
            max_degree: self.max_degree,
            indices: self.indices.clone(),
            spatial_points: points.iter().map(|&p| self.spatial_points[p].clone()).collect(),
            coeffs: self
                .coeffs
                .iter()
                .map(|c| points.iter().map(|&p| c[p]).collect())
                .collect(),
        }
    }

    /// Assembles `u_n(x) = sum_q w_q u(x, node_q) psi_n(node_q)` from a
    /// quadrature rule. `eval` maps a node (in the rule's stochastic
    /// dimension) to the quantity of interest over `spatial_points`.
    ///
    /// Nodes are evaluated in parallel batches; accumulation runs in node
    /// order so the result does not depend on the thread count.
    pub fn project<F>(
        rule: &QuadratureRule,
        max_degree: u32,
        spatial_points: Vec<Point>,
        eval: F,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>, ModelError> + Sync + Send,
    {
        let mut expansion = Self::zeros(rule.dim(), max_degree, spatial_points);
        let basis = expansion.basis();
        let npts = expansion.num_points();
        let count = rule.len();
        let mut psi = vec![0.0; basis.len()];
        let mut start = 0;
        while start < count {
            let end = (start + par::BATCH).min(count);
            let values = par::try_map_range(start, end, |q| {
                let u = eval(rule.node(q)).map_err(|source| Error::ModelAtNode { node: q, source })?;
                if u.len() != npts {
                    return Err(Error::ModelAtNode {
                        node: q,
                        source: ModelError::DimensionMismatch {
                            expected: npts,
                            got: u.len(),
                        },
                    });
                }
                Ok(u)
            })?;
            for (offset, u) in values.iter().enumerate() {
                let q = start + offset;
                basis.values_into(rule.node(q), &mut psi)?;
                let w = rule.weight(q);
                for (coeff, &p) in expansion.coeffs.iter_mut().zip(&psi) {
                    let wp = w * p;
                    if wp == 0.0 {
                        continue;
                    }
                    for (c, ux) in coeff.iter_mut().zip(u) {
                        *c += wp * ux;
                    }
                }
            }
            start = end;
        }
        Ok(expansion)
    }
}

/// Serialized form: `{dim, max_degree, indices, spatial_points, coeffs}`.
#[derive(Serialize, Deserialize)]
struct ExpansionDoc {
    dim: usize,
    max_degree: u32,
    indices: Vec<Vec<u32>>,
    spatial_points: Vec<Point>,
    coeffs: Vec<Vec<f64>>,
}

impl From<GpcExpansion> for ExpansionDoc {
    fn from(e: GpcExpansion) -> Self {
        Self {
            dim: e.dim,
            max_degree: e.max_degree,
            indices: e.indices.into_iter().map(|m| m.entries).collect(),
            spatial_points: e.spatial_points,
            coeffs: e.coeffs,
        }
    }
}

impl TryFrom<ExpansionDoc> for GpcExpansion {
    type Error = Error;

    fn try_from(doc: ExpansionDoc) -> Result<Self> {
        let canonical = total_degree_indices(doc.dim, doc.max_degree);
        let listed: Vec<MultiIndex> = doc.indices.into_iter().map(MultiIndex::new).collect();
        if listed != canonical {
            return Err(Error::IndexSetMismatch(format!(
                "indices are not the canonical total-degree set for d = {}, N = {}",
                doc.dim, doc.max_degree
            )));
        }
        Self::from_coeffs(doc.dim, doc.max_degree, doc.spatial_points, doc.coeffs)
    }
}
