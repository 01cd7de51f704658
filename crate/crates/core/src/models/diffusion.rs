//! Steady diffusion `-div(exp(a) grad u) = f` on a rectangle with a
//! log-normal conductivity.
//!
//! Cell-centered finite volumes on an `nx x ny` grid: five-point stencil,
//! harmonic averaging of `exp(a)` across interior faces, Dirichlet data on
//! `x = 0` and `x = X1` imposed at the half-cell distance, zero flux on
//! `y = 0` and `y = X2`. The source is a unit point sink in the center cell:
//! its integrated strength enters the right-hand side, i.e. `f` is the sink
//! value divided by the cell area. Unknowns are numbered `k = i * ny + j`, so
//! the SPD system is banded with half-bandwidth `ny` and is factored by a
//! banded Cholesky decomposition.

use crate::error::{Error, ModelError, Result};
use crate::models::{check_input, EvalCounter, StochasticModel};
use crate::polychaos::Point;
use crate::randfield::{discrete_kl, CovarianceSpec, KlBasis, TensorGrid};

/// Mean of the log-conductivity giving `E[exp(a)] = 5`, `sd[exp(a)] = 2.5`.
pub fn standard_log_mean() -> f64 {
    (5.0 / 1.25f64.sqrt()).ln()
}

/// Maximal standard deviation of the log-conductivity, `sqrt(ln 1.25)`.
pub fn standard_sigma_max() -> f64 {
    1.25f64.ln().sqrt()
}

/// Diagonal of the correlation matrix `L`.
pub const STANDARD_CORRELATION: [f64; 2] = [1.0 / 24.0, 1.0 / 20.0];

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionProblem {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub left: f64,
    pub right: f64,
    /// Integrated source in the center cell (negative for a sink).
    pub sink: f64,
}

impl Default for DiffusionProblem {
    fn default() -> Self {
        Self {
            lx: 240.0,
            ly: 60.0,
            nx: 120,
            ny: 30,
            left: 50.0,
            right: 25.0,
            sink: -1.0,
        }
    }
}

impl DiffusionProblem {
    pub fn with_grid(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::InvalidParameter(format!(
                "diffusion grid must be at least 3x3 (got {}x{})",
                self.nx, self.ny
            )));
        }
        if !(self.lx > 0.0 && self.ly > 0.0) {
            return Err(Error::InvalidParameter("domain extents must be positive".into()));
        }
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    pub fn grid(&self) -> TensorGrid {
        TensorGrid {
            xs: (0..self.nx).map(|i| (i as f64 + 0.5) * self.hx()).collect(),
            ys: (0..self.ny).map(|j| (j as f64 + 0.5) * self.hy()).collect(),
        }
    }

    pub fn cell_centers(&self) -> Vec<Point> {
        self.grid().points()
    }

    /// Cell containing the domain center (the upper one when the center lies
    /// on a cell face).
    pub fn center_cell(&self) -> usize {
        self.index(self.nx / 2, self.ny / 2)
    }

    /// Stiffness matrix and right-hand side for the log-conductivity field.
    pub fn assemble(&self, log_conductivity: &[f64]) -> Result<(BandedSpd, Vec<f64>), ModelError> {
        let n = self.num_cells();
        if log_conductivity.len() != n {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                got: log_conductivity.len(),
            });
        }
        let k: Vec<f64> = log_conductivity.iter().map(|a| a.exp()).collect();
        if k.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(ModelError::NonFinite("conductivity exp(a)"));
        }
        let (hx, hy) = (self.hx(), self.hy());
        let (tx, ty) = (hy / hx, hx / hy);
        let mut a = BandedSpd::zeros(n, self.ny);
        let mut rhs = vec![0.0; n];
        let harmonic = |p: f64, q: f64| 2.0 * p * q / (p + q);
        for i in 0..self.nx {
            for j in 0..self.ny {
                let c = self.index(i, j);
                if i + 1 < self.nx {
                    let e = self.index(i + 1, j);
                    a.add_coupling(c, e, tx * harmonic(k[c], k[e]));
                }
                if j + 1 < self.ny {
                    let e = self.index(i, j + 1);
                    a.add_coupling(c, e, ty * harmonic(k[c], k[e]));
                }
                if i == 0 {
                    let t = 2.0 * tx * k[c];
                    a.add_diagonal(c, t);
                    rhs[c] += t * self.left;
                }
                if i + 1 == self.nx {
                    let t = 2.0 * tx * k[c];
                    a.add_diagonal(c, t);
                    rhs[c] += t * self.right;
                }
            }
        }
        rhs[self.center_cell()] += self.sink;
        Ok((a, rhs))
    }

    /// Cell-center solution for the given log-conductivity field.
    pub fn solve(&self, log_conductivity: &[f64]) -> Result<Vec<f64>, ModelError> {
        let (a, rhs) = self.assemble(log_conductivity)?;
        let u = a.factor()?.solve(&rhs);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("diffusion solution"));
        }
        Ok(u)
    }
}

/// Symmetric banded matrix, lower band stored row-wise:
/// `band[i * (bw + 1) + (i - j)] = A[i][j]` for `i - bw <= j <= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.bw + 1) + (i - j)]
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.band[i * (self.bw + 1) + (i - j)]
    }

    pub fn add_diagonal(&mut self, i: usize, v: f64) {
        *self.at_mut(i, i) += v;
    }

    /// Adds the conductance `t` between unknowns `p` and `q`.
    pub fn add_coupling(&mut self, p: usize, q: usize, t: f64) {
        let (hi, lo) = if p > q { (p, q) } else { (q, p) };
        assert!(hi - lo <= self.bw, "coupling outside the band");
        *self.at_mut(hi, hi) += t;
        *self.at_mut(lo, lo) += t;
        *self.at_mut(hi, lo) -= t;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i > j { (i, j) } else { (j, i) };
        if hi - lo > self.bw {
            0.0
        } else {
            self.at(hi, lo)
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            y[i] += self.at(i, i) * x[i];
            for j in i.saturating_sub(self.bw)..i {
                let v = self.at(i, j);
                y[i] += v * x[j];
                y[j] += v * x[i];
            }
        }
        y
    }

    /// Banded Cholesky `A = L L^T`.
    pub fn factor(mut self) -> Result<BandedCholesky, ModelError> {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let mut s = self.at(i, j);
                for k in lo.max(j.saturating_sub(self.bw))..j {
                    s -= self.at(i, k) * self.at(j, k);
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(ModelError::NotPositiveDefinite { pivot: i, value: s });
                    }
                    *self.at_mut(i, i) = s.sqrt();
                } else {
                    *self.at_mut(i, j) = s / self.at(j, j);
                }
            }
        }
        Ok(BandedCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    l: BandedSpd,
}

impl BandedCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.l.n, self.l.bw);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l.at(i, k) * y[k];
            }
            y[i] = s / self.l.at(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l.at(k, i) * y[k];
            }
            y[i] = s / self.l.at(i, i);
        }
        y
    }
}

/// Diffusion problem driven by a truncated KL expansion of the
/// log-conductivity on the cell centers.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    problem: DiffusionProblem,
    kl: KlBasis,
    counter: EvalCounter,
}

impl DiffusionModel {
    pub fn new(problem: DiffusionProblem, kl: KlBasis) -> Result<Self> {
        problem.validate()?;
        if kl.num_points() != problem.num_cells() {
            return Err(Error::DimensionMismatch {
                expected: problem.num_cells(),
                got: kl.num_points(),
            });
        }
        Ok(Self {
            problem,
            kl,
            counter: EvalCounter::default(),
        })
    }

    /// Log-normal conductivity with mean 5 and standard deviation 2.5,
    /// `L = diag(1/24, 1/20)` on `[0, 240] x [0, 60]`, truncated to `d` terms.
    pub fn standard_setup(nx: usize, ny: usize, d: usize) -> Result<Self> {
        let problem = DiffusionProblem::with_grid(nx, ny);
        problem.validate()?;
        let spec = CovarianceSpec::on_grid(
            standard_sigma_max(),
            STANDARD_CORRELATION[0],
            STANDARD_CORRELATION[1],
            problem.grid(),
        )?
        .with_mean(standard_log_mean());
        let kl = discrete_kl(&spec, d)?;
        Self::new(problem, kl)
    }

    pub fn problem(&self) -> &DiffusionProblem {
        &self.problem
    }

    pub fn kl(&self) -> &KlBasis {
        &self.kl
    }
}

/// Solves the diffusion problem for the realization `xi` of the KL field.
pub fn diffusion_solve(problem: &DiffusionProblem, kl: &KlBasis, xi: &[f64]) -> Result<Vec<f64>, ModelError> {
    check_input(kl.trunc_dim(), xi)?;
    let a = kl.sample(xi).map_err(|e| ModelError::Other(e.to_string()))?;
    problem.solve(&a)
}

impl StochasticModel for DiffusionModel {
    fn stochastic_dim(&self) -> usize {
        self.kl.trunc_dim()
    }

    fn spatial_points(&self) -> &[Point] {
        &self.kl.points
    }

    fn evaluate(&self, xi: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.counter.bump();
        diffusion_solve(&self.problem, &self.kl, xi)
    }

    fn evaluations(&self) -> u64 {
        self.counter.get()
    }
}
