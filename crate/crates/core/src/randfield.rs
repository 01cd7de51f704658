//! Squared-exponential Gaussian random fields and their discrete
//! Karhunen-Loeve expansion.
//!
//! The covariance `C(x, y) = sigma^2 exp(-|L(x - y)|^2)` is discretized by an
//! equal-weight Nystrom rule on the evaluation points (weight `1/n`). For a
//! tensor grid with diagonal `L` the kernel matrix is a Kronecker product of
//! two 1-D kernel matrices, and the eigenproblem is solved per axis.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::epistemic::validate_tau;
use crate::error::{check_dim, Error, Result};
use crate::polychaos::Point;

/// Relative threshold below which eigenvalues count as numerically zero.
pub const ZERO_EIGENVALUE_REL: f64 = 1e-14;

/// Axis-aligned tensor grid layout: point `k = i * ys.len() + j` sits at
/// `(xs[i], ys[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl TensorGrid {
    pub fn points(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.xs.len() * self.ys.len());
        for &x in &self.xs {
            for &y in &self.ys {
                out.push(vec![x, y]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    sigma: f64,
    /// Row-major `n x n` correlation matrix `L`.
    lmat: Vec<Vec<f64>>,
    points: Vec<Point>,
    mean: f64,
    grid: Option<TensorGrid>,
}

impl CovarianceSpec {
    /// General point set with a full correlation matrix.
    pub fn new(sigma: f64, lmat: Vec<Vec<f64>>, points: Vec<Point>) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive (got {sigma})")));
        }
        if points.is_empty() {
            return Err(Error::InvalidParameter("covariance needs at least one point".into()));
        }
        let n = lmat.len();
        for row in &lmat {
            check_dim(n, row.len())?;
        }
        for p in &points {
            check_dim(n, p.len())?;
        }
        Ok(Self {
            sigma,
            lmat,
            points,
            mean: 0.0,
            grid: None,
        })
    }

    /// Tensor grid in 2-D with `L = diag(lx, ly)`.
    pub fn on_grid(sigma: f64, lx: f64, ly: f64, grid: TensorGrid) -> Result<Self> {
        let mut spec = Self::new(sigma, vec![vec![lx, 0.0], vec![0.0, ly]], grid.points())?;
        spec.grid = Some(grid);
        Ok(spec)
    }

    /// Sets the constant mean `a_0` carried into the KL basis.
    pub fn with_mean(mut self, mean: f64) -> Self {
        self.mean = mean;
        self
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Equal Nystrom weight `1/n`.
    pub fn weight(&self) -> f64 {
        1.0 / self.points.len() as f64
    }

    pub fn kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = self
            .lmat
            .iter()
            .map(|row| {
                let s: f64 = row.iter().zip(x.iter().zip(y)).map(|(l, (a, b))| l * (a - b)).sum();
                s * s
            })
            .sum();
        self.sigma * self.sigma * (-r2).exp()
    }

    fn is_diagonal(&self) -> bool {
        self.lmat
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| i == j || v == 0.0))
    }
}

/// `sigma^2 exp(-|L(x - y)|^2)`.
pub fn kernel_eval(spec: &CovarianceSpec, x: &[f64], y: &[f64]) -> f64 {
    spec.kernel(x, y)
}

/// Truncated discrete KL basis: mean, eigenvalues (descending) and
/// eigenvectors normalized so that `weight * sum_k a_i[k]^2 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlBasis {
    pub points: Vec<Point>,
    pub mean: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub weight: f64,
    /// `sum of retained eigenvalues / trace`.
    pub energy_ratio: f64,
}

impl KlBasis {
    pub fn trunc_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// `a_0 + sum_i sqrt(lambda_i) a_i xi_i`.
    pub fn sample(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.mean.clone();
        self.sample_into(xi, &mut out)?;
        Ok(out)
    }

    /// Like [`KlBasis::sample`] but writes into `out` (which is overwritten).
    pub fn sample_into(&self, xi: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.trunc_dim(), xi.len())?;
        check_dim(self.num_points(), out.len())?;
        out.copy_from_slice(&self.mean);
        for ((lambda, vec), &x) in self.eigenvalues.iter().zip(&self.eigenvectors).zip(xi) {
            let s = lambda.sqrt() * x;
            if s == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(vec) {
                *o += s * a;
            }
        }
        Ok(())
    }

    /// Eigenvalue decay as CSV: `index,eigenvalue,relative`.
    pub fn write_eigenvalues_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "eigenvalue", "relative"])?;
        let first = self.eigenvalues.first().copied().unwrap_or(1.0);
        for (i, l) in self.eigenvalues.iter().enumerate() {
            w.write_record(&[(i + 1).to_string(), l.to_string(), (l / first).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `a_0 + sum_i sqrt(lambda_i) a_i xi_i`.
pub fn sample_field(kl: &KlBasis, xi: &[f64]) -> Result<Vec<f64>> {
    kl.sample(xi)
}

/// Basis of the covariance `tau^2 C`: eigenvalues times `tau^2`.
pub fn scale_variance(kl: &KlBasis, tau: f64) -> Result<KlBasis> {
    validate_tau(tau)?;
    let mut out = kl.clone();
    for l in out.eigenvalues.iter_mut() {
        *l *= tau * tau;
    }
    Ok(out)
}

/// Eigenpairs of the symmetric matrix, sorted by descending eigenvalue, with
/// unit Euclidean eigenvectors sign-fixed so the largest-magnitude entry is
/// positive.
pub(crate) fn sorted_eigen(matrix: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(matrix);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&l, v)| {
            let mut v: Vec<f64> = v.iter().copied().collect();
            fix_sign(&mut v);
            (l, v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Flips `v` so that its first entry of largest magnitude is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Discrete KL expansion truncated to `d` terms.
///
/// Errors with [`Error::KlTruncation`] when fewer than `d` eigenvalues exceed
/// `1e-14 * lambda_1`.
pub fn discrete_kl(spec: &CovarianceSpec, d: usize) -> Result<KlBasis> {
    let n = spec.points.len();
    let w = spec.weight();
    let trace = spec.sigma * spec.sigma;
    let pairs: Vec<(f64, Vec<f64>)> = match &spec.grid {
        Some(grid) if spec.is_diagonal() => separable_pairs(spec, grid, d)?,
        _ => {
            let k = DMatrix::from_fn(n, n, |i, j| w * spec.kernel(&spec.points[i], &spec.points[j]));
            sorted_eigen(k)
        }
    };
    let lambda1 = pairs.first().map(|p| p.0).unwrap_or(0.0);
    let admissible = pairs
        .iter()
        .take_while(|p| p.0 > ZERO_EIGENVALUE_REL * lambda1 && p.0 > 0.0)
        .count();
    if d > admissible || d > n {
        return Err(Error::KlTruncation {
            requested: d,
            max_admissible: admissible.min(n),
        });
    }
    let scale = 1.0 / w.sqrt();
    let eigenvalues: Vec<f64> = pairs[..d].iter().map(|p| p.0).collect();
    let eigenvectors = pairs[..d]
        .iter()
        .map(|p| p.1.iter().map(|v| v * scale).collect())
        .collect();
    let energy_ratio = eigenvalues.iter().sum::<f64>() / trace;
    Ok(KlBasis {
        points: spec.points.clone(),
        mean: vec![spec.mean; n],
        eigenvalues,
        eigenvectors,
        weight: w,
        energy_ratio,
    })
}

/// Kronecker route: eigenpairs of `(w_x K_x) (x) (w_y K_y)` are products of
/// the 1-D pairs. Returns at least the `d` leading pairs when they exist.
fn separable_pairs(spec: &CovarianceSpec, grid: &TensorGrid, d: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    let (lx, ly) = (spec.lmat[0][0], spec.lmat[1][1]);
    let axis = |coords: &[f64], l: f64| {
        let m = coords.len();
        let w = 1.0 / m as f64;
        sorted_eigen(DMatrix::from_fn(m, m, |i, j| {
            let r = l * (coords[i] - coords[j]);
            w * (-r * r).exp()
        }))
    };
    let ex = axis(&grid.xs, lx);
    let ey = axis(&grid.ys, ly);
    let s2 = spec.sigma * spec.sigma;
    // products (i, j) with i, j < d + 1 include the d largest, since each
    // factor spectrum is sorted
    let keep_x = ex.len().min(d + 1);
    let keep_y = ey.len().min(d + 1);
    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(keep_x * keep_y);
    for (i, px) in ex[..keep_x].iter().enumerate() {
        for (j, py) in ey[..keep_y].iter().enumerate() {
            cand.push((s2 * px.0 * py.0, i, j));
        }
    }
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let take = cand.len().min(d + 1);
    Ok(cand[..take]
        .iter()
        .map(|&(l, i, j)| {
            let mut v = Vec::with_capacity(ex[i].1.len() * ey[j].1.len());
            for a in &ex[i].1 {
                for b in &ey[j].1 {
                    v.push(a * b);
                }
            }
            fix_sign(&mut v);
            (l, v)
        })
        .collect())
}
