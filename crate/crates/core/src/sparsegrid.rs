//! Gauss-Hermite rules and their Smolyak sparse-grid combination.
//!
//! All rules integrate against the standard Gaussian probability measure, so
//! weights sum to one. The 1-D rule used at Smolyak level `i` has `i` points
//! (non-nested), which reproduces the usual published node counts: 201 nodes
//! for `d = 100` at level 2, 8761 for `d = 10` at level 5.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_dim, Error, ModelError, Result};
use crate::par;
use crate::polychaos::hermite_eval;

/// Nodes and weights of a `d`-dimensional quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    level: u32,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Builds a rule from a flat node array (`weights.len() * dim` entries).
    pub fn new(dim: usize, level: u32, nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_dim(weights.len() * dim, nodes.len())?;
        Ok(Self {
            dim,
            level,
            nodes,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Number of nodes `Q_d`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, q: usize) -> &[f64] {
        &self.nodes[q * self.dim..(q + 1) * self.dim]
    }

    pub fn weight(&self, q: usize) -> f64 {
        self.weights[q]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.dim.max(1))
    }

    /// `sum_q w_q f(node_q)`. Evaluations may run concurrently; the sum is
    /// accumulated in stored node order.
    pub fn integrate<F>(&self, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>, ModelError> + Sync + Send,
    {
        let mut acc: Option<Vec<f64>> = None;
        let mut start = 0;
        while start < self.len() {
            let end = (start + par::BATCH).min(self.len());
            let values = par::try_map_range(start, end, |q| {
                f(self.node(q)).map_err(|source| Error::ModelAtNode { node: q, source })
            })?;
            for (offset, v) in values.into_iter().enumerate() {
                let w = self.weights[start + offset];
                let sum = acc.get_or_insert_with(|| vec![0.0; v.len()]);
                if sum.len() != v.len() {
                    return Err(Error::ModelAtNode {
                        node: start + offset,
                        source: ModelError::DimensionMismatch {
                            expected: sum.len(),
                            got: v.len(),
                        },
                    });
                }
                for (s, x) in sum.iter_mut().zip(&v) {
                    *s += w * x;
                }
            }
            start = end;
        }
        Ok(acc.unwrap_or_default())
    }

    /// Merges nodes whose coordinates agree to 12 significant digits, summing
    /// their weights. Smolyak rules are already merged, so this is a no-op on
    /// them apart from node order.
    pub fn merged(&self) -> Self {
        let mut acc: HashMap<Vec<NodeKey>, (usize, f64)> = HashMap::new();
        let mut order = Vec::new();
        for q in 0..self.len() {
            let key: Vec<NodeKey> = self.node(q).iter().map(|&x| node_key(x)).collect();
            let entry = acc.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (q, 0.0)
            });
            entry.1 += self.weights[q];
        }
        let mut nodes = Vec::with_capacity(order.len() * self.dim);
        let mut weights = Vec::with_capacity(order.len());
        for key in &order {
            let (q, w) = acc[key];
            nodes.extend_from_slice(self.node(q));
            weights.push(w);
        }
        Self {
            dim: self.dim,
            level: self.level,
            nodes,
            weights,
        }
    }

    /// CSV with one row per node: weight, then coordinates.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["weight".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for q in 0..self.len() {
            let mut row = vec![self.weights[q].to_string()];
            row.extend(self.node(q).iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A coordinate rounded to 12 significant digits: `(mantissa, exponent)`.
pub type NodeKey = (i64, i32);

/// Rounds `x` to 12 significant digits for node identification.
pub fn node_key(x: f64) -> NodeKey {
    if x == 0.0 || !x.is_finite() {
        return (0, 0);
    }
    let exp = x.abs().log10().floor() as i32;
    let mantissa = (x / 10f64.powi(exp - 11)).round() as i64;
    (mantissa, exp)
}

/// `m`-point Gauss-Hermite rule for the standard Gaussian measure, nodes in
/// ascending order. Exact for polynomials of degree `2m - 1`.
///
/// Nodes come from the Golub-Welsch eigenproblem and are polished by Newton
/// steps on `psi_m`; weights are the Christoffel numbers
/// `1 / sum_{k<m} psi_k(x)^2`. Nodes are symmetrized exactly about zero.
pub fn gauss_hermite_1d(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "a Gauss-Hermite rule needs at least one point");
    if m == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut x: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    x.sort_by(|a, b| a.total_cmp(b));

    let mf = m as f64;
    for xi in x.iter_mut() {
        for _ in 0..3 {
            let p = hermite_eval(m as u32, *xi);
            let dp = mf.sqrt() * hermite_eval(m as u32 - 1, *xi);
            if dp != 0.0 {
                *xi -= p / dp;
            }
        }
    }
    for i in 0..m / 2 {
        let half = 0.5 * (x[m - 1 - i] - x[i]);
        x[i] = -half;
        x[m - 1 - i] = half;
    }
    if m % 2 == 1 {
        x[m / 2] = 0.0;
    }

    let mut w: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let mut table = vec![0.0; m];
            crate::polychaos::hermite_table(xi, &mut table);
            1.0 / table.iter().map(|p| p * p).sum::<f64>()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for wi in w.iter_mut() {
        *wi /= total;
    }
    (x, w)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Smolyak sparse grid of the given level in `dim` dimensions.
///
/// Combination technique over multi-levels `i >= 1` in the band
/// `max(dim, level) <= |i| <= level + dim - 1`, coefficient
/// `(-1)^(level+dim-1-|i|) * C(dim-1, level+dim-1-|i|)`, and the `i`-point
/// Gauss-Hermite rule in each coordinate. Coincident nodes are merged with
/// summed weights; negative weights are kept.
pub fn smolyak(dim: usize, level: u32) -> Result<QuadratureRule> {
    if dim == 0 || level == 0 {
        return Err(Error::InvalidParameter(format!(
            "sparse grid needs dim >= 1 and level >= 1 (got dim = {dim}, level = {level})"
        )));
    }
    let level = level as usize;
    let rules: Vec<(Vec<f64>, Vec<f64>)> = (1..=level).map(gauss_hermite_1d).collect();

    // One id per distinct 1-D node value, ids ordered by value.
    let mut values: Vec<(NodeKey, f64)> = rules
        .iter()
        .flat_map(|(x, _)| x.iter().map(|&v| (node_key(v), v)))
        .collect();
    values.sort_by(|a, b| a.1.total_cmp(&b.1));
    values.dedup_by(|a, b| a.0 == b.0);
    let id_of: HashMap<NodeKey, u16> = values
        .iter()
        .enumerate()
        .map(|(i, (k, _))| (*k, i as u16))
        .collect();
    let rule_ids: Vec<Vec<u16>> = rules
        .iter()
        .map(|(x, _)| x.iter().map(|&v| id_of[&node_key(v)]).collect())
        .collect();
    let zero_id = id_of[&node_key(0.0)];

    // Excess levels k = i - 1 with max(0, level - dim) <= |k| <= level - 1.
    let lo = level.saturating_sub(dim);
    let mut acc: HashMap<Vec<u16>, f64> = HashMap::new();
    let mut excess = vec![0usize; dim];
    for total in lo..level {
        let gap = level - 1 - total;
        let sign = if gap % 2 == 0 { 1.0 } else { -1.0 };
        let coef = sign * binomial(dim - 1, gap);
        for_each_composition(&mut excess, 0, total, &mut |k| {
            let active: Vec<usize> = (0..dim).filter(|&j| k[j] > 0).collect();
            let mut key = vec![zero_id; dim];
            let mut cursor = vec![0usize; active.len()];
            loop {
                let mut w = coef;
                for (c, &j) in cursor.iter().zip(&active) {
                    key[j] = rule_ids[k[j]][*c];
                    w *= rules[k[j]].1[*c];
                }
                *acc.entry(key.clone()).or_insert(0.0) += w;
                // odometer over the active coordinates
                let mut pos = 0;
                loop {
                    if pos == active.len() {
                        return;
                    }
                    cursor[pos] += 1;
                    if cursor[pos] < k[active[pos]] + 1 {
                        break;
                    }
                    cursor[pos] = 0;
                    pos += 1;
                }
            }
        });
    }

    let mut keys: Vec<(Vec<u16>, f64)> = acc.into_iter().collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0));
    let mut nodes = Vec::with_capacity(keys.len() * dim);
    let mut weights = Vec::with_capacity(keys.len());
    for (key, w) in keys {
        nodes.extend(key.iter().map(|&id| values[id as usize].1));
        weights.push(w);
    }
    QuadratureRule::new(dim, level as u32, nodes, weights)
}

/// Full tensor product of `points`-point Gauss-Hermite rules.
pub fn tensor_gauss_hermite(dim: usize, points: usize) -> QuadratureRule {
    let (x, w) = gauss_hermite_1d(points);
    let count = points.pow(dim as u32);
    let mut nodes = Vec::with_capacity(count * dim);
    let mut weights = Vec::with_capacity(count);
    for flat in 0..count {
        let mut rem = flat;
        let mut weight = 1.0;
        for _ in 0..dim {
            let i = rem % points;
            rem /= points;
            nodes.push(x[i]);
            weight *= w[i];
        }
        weights.push(weight);
    }
    QuadratureRule {
        dim,
        level: points as u32,
        nodes,
        weights,
    }
}

fn for_each_composition<F: FnMut(&[usize])>(scratch: &mut [usize], pos: usize, remaining: usize, f: &mut F) {
    if pos + 1 == scratch.len() {
        scratch[pos] = remaining;
        f(scratch);
        scratch[pos] = 0;
        return;
    }
    for first in (0..=remaining).rev() {
        scratch[pos] = first;
        for_each_composition(scratch, pos + 1, remaining - first, f);
    }
    scratch[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polychaos::{tensor_poly_eval, total_degree_indices};
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_dimensional_examples() {
        let (x, w) = gauss_hermite_1d(1);
        assert_eq!((x, w), (vec![0.0], vec![1.0]));

        let (x, w) = gauss_hermite_1d(2);
        assert_abs_diff_eq!(x[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);

        let (x, w) = gauss_hermite_1d(3);
        let r3 = 3f64.sqrt();
        assert_abs_diff_eq!(x[0], -r3, epsilon = 1e-14);
        assert_eq!(x[1], 0.0);
        assert_abs_diff_eq!(x[2], r3, epsilon = 1e-14);
        assert_abs_diff_eq!(w[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn one_dimensional_exactness() {
        // E[x^k] = (k-1)!! for even k, 0 for odd k
        fn gaussian_moment(k: u32) -> f64 {
            if k % 2 == 1 {
                0.0
            } else {
                (1..k).step_by(2).map(|v| v as f64).product()
            }
        }
        for m in 1..=20 {
            let (x, w) = gauss_hermite_1d(m);
            for k in 0..(2 * m as u32) {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                let scale: f64 = x.iter().zip(&w).map(|(x, w)| w * x.abs().powi(k as i32)).sum();
                let exact = gaussian_moment(k);
                assert!(
                    (s - exact).abs() <= 1e-12 * scale.max(1.0),
                    "m={m} k={k} s={s} exact={exact}"
                );
            }
            for i in 0..m {
                assert_eq!(x[i], -x[m - 1 - i]);
            }
        }
    }

    #[test]
    fn level_one_is_the_origin() {
        for d in [1, 3, 17] {
            let rule = smolyak(d, 1).unwrap();
            assert_eq!(rule.len(), 1);
            assert!(rule.node(0).iter().all(|&x| x == 0.0));
            assert_abs_diff_eq!(rule.weight(0), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn small_counts_and_weight_sums() {
        assert_eq!(smolyak(100, 2).unwrap().len(), 201);
        assert_eq!(smolyak(10, 5).unwrap().len(), 8761);
        for d in 1..=6 {
            for level in 1..=6 {
                let rule = smolyak(d, level).unwrap();
                let sum: f64 = rule.weights().iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "d={d} l={level} sum={sum}");
            }
        }
        // in 1-D the sparse grid is just the Gauss-Hermite rule of that level
        let rule = smolyak(1, 4).unwrap();
        let (x, _) = gauss_hermite_1d(4);
        assert_eq!(rule.len(), 4);
        for q in 0..4 {
            assert_abs_diff_eq!(rule.node(q)[0], x[q], epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(smolyak(0, 2).is_err());
        assert!(smolyak(2, 0).is_err());
    }

    #[test]
    fn merge_is_idempotent() {
        for (d, level) in [(2, 4), (3, 5), (5, 3)] {
            let rule = smolyak(d, level).unwrap();
            let merged = rule.merged();
            assert_eq!(merged.len(), rule.len());
            let twice = merged.merged();
            assert_eq!(twice.len(), rule.len());
        }
    }

    #[test]
    fn sparse_rule_matches_tensor_rule_on_random_polynomials() {
        // deterministic pseudo-random coefficients
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for d in 1..=3 {
            for level in 1..=5u32 {
                let sparse = smolyak(d, level).unwrap();
                let tensor = tensor_gauss_hermite(d, level as usize);
                let degree = 2 * level - 1;
                let monomials = total_degree_indices(d, degree);
                let coeffs: Vec<f64> = monomials.iter().map(|_| next()).collect();
                let poly = |xi: &[f64]| -> Result<Vec<f64>, ModelError> {
                    Ok(vec![monomials
                        .iter()
                        .zip(&coeffs)
                        .map(|(m, c)| {
                            c * m
                                .entries()
                                .iter()
                                .zip(xi)
                                .map(|(&k, &x)| x.powi(k as i32))
                                .product::<f64>()
                        })
                        .sum()])
                };
                let a = sparse.integrate(poly).unwrap()[0];
                let b = tensor.integrate(poly).unwrap()[0];
                assert!((a - b).abs() < 1e-10, "d={d} l={level}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn integrate_examples() {
        let rule = smolyak(3, 2).unwrap();
        assert_abs_diff_eq!(rule.integrate(|_| Ok(vec![1.0])).unwrap()[0], 1.0, epsilon = 1e-14);
        for i in 0..3 {
            let v = rule.integrate(|xi| Ok(vec![xi[i] * xi[i]])).unwrap()[0];
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-13);
        }
        // orthonormality at level N + 2
        let n_max = 3;
        let rule = smolyak(2, n_max + 2).unwrap();
        let idx = total_degree_indices(2, n_max);
        for a in &idx {
            for b in &idx {
                let v = rule
                    .integrate(|xi| {
                        Ok(vec![tensor_poly_eval(a, xi).unwrap() * tensor_poly_eval(b, xi).unwrap()])
                    })
                    .unwrap()[0];
                let expected = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn integrate_reports_node_index() {
        let rule = smolyak(2, 3).unwrap();
        let err = rule
            .integrate(|xi| {
                if xi[1] < -1.0 {
                    Err(ModelError::NonFinite("test"))
                } else {
                    Ok(vec![0.0])
                }
            })
            .unwrap_err();
        assert!(matches!(err, Error::ModelAtNode { node, .. } if rule.node(node)[1] < -1.0));
    }

    #[test]
    fn csv_export_has_one_row_per_node() {
        let rule = smolyak(2, 3).unwrap();
        let mut buf = Vec::new();
        rule.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "weight,x1,x2");
        assert_eq!(lines.len(), rule.len() + 1);
    }

    #[test]
    fn node_key_rounds_to_twelve_digits() {
        assert_eq!(node_key(1.0), node_key(1.0 + 1e-14));
        assert_ne!(node_key(1.0), node_key(1.0 + 1e-10));
        assert_eq!(node_key(-2.5), (-250_000_000_000, 0));
        assert_eq!(node_key(0.0), (0, 0));
    }
}
