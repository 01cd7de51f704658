//! Closed-form test model `u(x, xi) = g(c_0(x) + sum_j c_j(x) xi_j)` with
//! `g = exp` (log-normal QoI) or `g = identity` (Gaussian QoI).

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, ModelError, Result};
use crate::models::{check_input, EvalCounter, StochasticModel};
use crate::polychaos::{Moments, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Exp,
    Identity,
}

#[derive(Debug, Clone)]
pub struct SyntheticModel {
    link: Link,
    points: Vec<Point>,
    c0: Vec<f64>,
    /// `c[j][p]`: coefficient of `xi_j` at point `p`.
    c: Vec<Vec<f64>>,
    counter: EvalCounter,
}

impl SyntheticModel {
    pub fn new(link: Link, points: Vec<Point>, c0: Vec<f64>, c: Vec<Vec<f64>>) -> Result<Self> {
        check_dim(points.len(), c0.len())?;
        for cj in &c {
            check_dim(points.len(), cj.len())?;
        }
        if c0.iter().chain(c.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("synthetic coefficients must be finite".into()));
        }
        Ok(Self {
            link,
            points,
            c0,
            c,
            counter: EvalCounter::default(),
        })
    }

    /// `npts` points on `[0, 1]`; `c_j(x) = log_std * w_j * g_j(x)` with
    /// `w_j` proportional to `2^-j`, `sum_j w_j^2 = 1` and `1/3 <= g_j <= 1`,
    /// so that `sum_j c_j(x)^2 <= log_std^2`.
    pub fn decaying(link: Link, d: usize, npts: usize, log_std: f64) -> Result<Self> {
        if d == 0 || npts == 0 {
            return Err(Error::InvalidParameter("synthetic model needs d >= 1 and at least one point".into()));
        }
        let points: Vec<Point> = (0..npts)
            .map(|p| vec![if npts == 1 { 0.5 } else { p as f64 / (npts - 1) as f64 }])
            .collect();
        let raw: Vec<f64> = (1..=d).map(|j| 0.5f64.powi(j as i32)).collect();
        let norm = raw.iter().map(|w| w * w).sum::<f64>().sqrt();
        let c0 = points.iter().map(|x| 0.5 + 0.5 * x[0]).collect();
        let c = raw
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let jf = (j + 1) as f64;
                points
                    .iter()
                    .map(|x| {
                        let g = (2.0 + (jf * std::f64::consts::PI * x[0] + jf).sin()) / 3.0;
                        log_std * w / norm * g
                    })
                    .collect()
            })
            .collect();
        Self::new(link, points, c0, c)
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn c0(&self) -> &[f64] {
        &self.c0
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.c
    }

    /// `sum_j c_j(x)^2` per point.
    pub fn coefficient_energy(&self) -> Vec<f64> {
        (0..self.points.len())
            .map(|p| self.c.iter().map(|cj| cj[p] * cj[p]).sum())
            .collect()
    }

    /// Exact moments when the inputs are `tau * xi`.
    pub fn exact_moments(&self, tau: f64) -> Moments {
        let s2: Vec<f64> = self.coefficient_energy().iter().map(|s| tau * tau * s).collect();
        match self.link {
            Link::Identity => Moments {
                mean: self.c0.clone(),
                variance: s2,
            },
            Link::Exp => Moments {
                mean: self.c0.iter().zip(&s2).map(|(c, s)| (c + s / 2.0).exp()).collect(),
                variance: self
                    .c0
                    .iter()
                    .zip(&s2)
                    .map(|(c, s)| (2.0 * c + s).exp() * s.exp_m1())
                    .collect(),
            },
        }
    }
}

impl StochasticModel for SyntheticModel {
    fn stochastic_dim(&self) -> usize {
        self.c.len()
    }

    fn spatial_points(&self) -> &[Point] {
        &self.points
    }

    fn evaluate(&self, xi: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.counter.bump();
        check_input(self.c.len(), xi)?;
        let mut out = self.c0.clone();
        for (cj, &x) in self.c.iter().zip(xi) {
            for (o, c) in out.iter_mut().zip(cj) {
                *o += c * x;
            }
        }
        if self.link == Link::Exp {
            for o in out.iter_mut() {
                *o = o.exp();
            }
        }
        Ok(out)
    }

    fn evaluations(&self) -> u64 {
        self.counter.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polychaos::GpcExpansion;
    use crate::sparsegrid::smolyak;
    use approx::assert_abs_diff_eq;

    #[test]
    fn evaluates_at_origin() {
        let m = SyntheticModel::decaying(Link::Exp, 3, 5, 0.4).unwrap();
        let u = m.evaluate(&[0.0; 3]).unwrap();
        for (v, c) in u.iter().zip(m.c0()) {
            assert_eq!(*v, c.exp());
        }
        assert_eq!(m.evaluations(), 1);
        assert!(m.evaluate(&[0.0; 2]).is_err());
    }

    #[test]
    fn energy_is_bounded_by_log_std() {
        let m = SyntheticModel::decaying(Link::Exp, 6, 11, 0.5).unwrap();
        assert!(m.coefficient_energy().iter().all(|&s| s <= 0.25 + 1e-15 && s > 0.0));
    }

    #[test]
    fn gpc_mean_converges_with_degree() {
        let m = SyntheticModel::decaying(Link::Exp, 2, 4, 0.8).unwrap();
        let exact = m.exact_moments(1.0);
        let mut last = f64::INFINITY;
        for n in 1..=6 {
            let rule = smolyak(2, n + 2).unwrap();
            let e = GpcExpansion::project(&rule, n, m.spatial_points().to_vec(), |xi| m.evaluate(xi)).unwrap();
            let mom = e.moments();
            let err = mom
                .mean
                .iter()
                .zip(&exact.mean)
                .map(|(a, b)| ((a - b) / b).abs())
                .fold(0.0, f64::max);
            assert!(err < last, "N={n}: {err} !< {last}");
            last = err;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn linear_model_moments() {
        let m = SyntheticModel::new(
            Link::Identity,
            vec![vec![0.0], vec![1.0]],
            vec![1.0, 2.0],
            vec![vec![0.5, -1.0], vec![2.0, 0.0]],
        )
        .unwrap();
        let mom = m.exact_moments(0.5);
        assert_eq!(mom.mean, vec![1.0, 2.0]);
        assert_abs_diff_eq!(mom.variance[0], 0.25 * 4.25, epsilon = 1e-15);
        assert_abs_diff_eq!(mom.variance[1], 0.25, epsilon = 1e-15);
    }
}
