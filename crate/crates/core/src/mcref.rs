//! Monte Carlo reference moments and density estimation.
//!
//! Samples come from a counter-based stream: draw `i` is a pure function of
//! `(seed, i)`, so samples can be generated in any order or on any number of
//! threads and still be reduced in index order to the same bits.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::epistemic::validate_tau;
use crate::error::{Error, ModelError, Result};
use crate::par;
use crate::polychaos::Point;

/// Standard normal vectors indexed by sample number.
#[derive(Debug, Clone)]
pub struct NormalStream {
    seed: u64,
    normal: Normal,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            normal: Normal::standard(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fills `out` with the standard normal vector of sample `index`.
    pub fn fill(&self, index: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        for o in out.iter_mut() {
            // midpoint of a 2^-53 cell, never 0 or 1
            let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
            *o = self.normal.inverse_cdf(u);
        }
    }

    pub fn sample(&self, index: u64, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.fill(index, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub n_samples: u64,
    pub mean: Vec<f64>,
    /// Unbiased sample variance.
    pub variance: Vec<f64>,
    /// `sqrt(variance / n)`.
    pub std_error: Vec<f64>,
    pub seed: u64,
}

impl McEstimate {
    /// CSV: `spatial_index,mean,variance,std_error`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["spatial_index", "mean", "variance", "std_error"])?;
        for p in 0..self.mean.len() {
            w.write_record(&[
                p.to_string(),
                self.mean[p].to_string(),
                self.variance[p].to_string(),
                self.std_error[p].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Single-pass Welford accumulator over vector-valued samples.
#[derive(Debug, Clone)]
pub struct FieldStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl FieldStats {
    pub fn new(npts: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; npts],
            m2: vec![0.0; npts],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, sample: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }

    pub fn finish(self, seed: u64) -> McEstimate {
        let n = self.count as f64;
        let variance: Vec<f64> = self
            .m2
            .iter()
            .map(|s| if self.count > 1 { (s / (n - 1.0)).max(0.0) } else { 0.0 })
            .collect();
        let std_error = variance.iter().map(|v| (v / n).sqrt()).collect();
        McEstimate {
            n_samples: self.count,
            mean: self.mean,
            variance,
            std_error,
            seed,
        }
    }
}

/// Monte Carlo moments of `eval(tau * xi)` over `n` standard normal draws.
pub fn mc_moments<F>(eval: F, d: usize, n: u64, seed: u64, tau: f64) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, ModelError> + Sync + Send,
{
    if n < 2 {
        return Err(Error::InvalidParameter(format!("Monte Carlo needs n >= 2 (got {n})")));
    }
    validate_tau(tau)?;
    let stream = NormalStream::new(seed);
    let mut stats: Option<FieldStats> = None;
    let mut start = 0u64;
    while start < n {
        let end = (start + par::BATCH as u64).min(n);
        let batch = par::try_map_range(start as usize, end as usize, |i| {
            let mut xi = stream.sample(i as u64, d);
            xi.iter_mut().for_each(|x| *x *= tau);
            eval(&xi).map_err(|source| Error::ModelAtSample {
                sample: i as u64,
                source,
            })
        })?;
        for v in &batch {
            stats.get_or_insert_with(|| FieldStats::new(v.len())).push(v);
        }
        start = end;
    }
    Ok(stats.expect("n >= 2 samples were drawn").finish(seed))
}

/// `n` values of a scalar function of a standard normal `d`-vector.
pub fn sample_scalar<F>(f: F, d: usize, n: u64, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64, ModelError> + Sync + Send,
{
    let stream = NormalStream::new(seed);
    par::try_map_indexed(n as usize, |i| {
        let xi = stream.sample(i as u64, d);
        f(&xi).map_err(|source| Error::ModelAtSample {
            sample: i as u64,
            source,
        })
    })
}

/// Histogram and Gaussian-kernel density of samples at one spatial point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub point: Point,
    pub samples: Vec<f64>,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub pdf: Vec<f64>,
    /// All samples were equal: one occupied bin and no smooth density.
    pub point_mass: bool,
}

/// Number of abscissae of the smoothed density.
pub const DENSITY_GRID: usize = 512;

impl DensityEstimate {
    pub fn from_samples(point: Point, samples: Vec<f64>, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidParameter(format!("histogram needs at least 2 bins (got {bins})")));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidParameter("density estimation needs at least 2 samples".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite sample value".into()));
        }
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = samples.len();
        if lo == hi {
            return Ok(Self {
                point,
                edges: vec![lo, hi],
                counts: vec![n as u64],
                bandwidth: 0.0,
                grid: Vec::new(),
                pdf: Vec::new(),
                point_mass: true,
                samples,
            });
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|b| if b == bins { hi } else { lo + b as f64 * width }).collect();
        let mut counts = vec![0u64; bins];
        for &v in &samples {
            let b = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }

        let bandwidth = silverman_bandwidth(&samples);
        let (g0, g1) = (lo - 4.0 * bandwidth, hi + 4.0 * bandwidth);
        let step = (g1 - g0) / (DENSITY_GRID - 1) as f64;
        let grid: Vec<f64> = (0..DENSITY_GRID).map(|k| g0 + k as f64 * step).collect();
        let norm = 1.0 / (n as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
        let pdf = par::map_indexed(DENSITY_GRID, |k| {
            let x = grid[k];
            norm * samples
                .iter()
                .map(|s| {
                    let z = (x - s) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        });
        Ok(Self {
            point,
            samples,
            edges,
            counts,
            bandwidth,
            grid,
            pdf,
            point_mass: false,
        })
    }

    /// Trapezoid integral of the smoothed density.
    pub fn pdf_mass(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.pdf.windows(2))
            .map(|(x, p)| 0.5 * (x[1] - x[0]) * (p[0] + p[1]))
            .sum()
    }

    /// CSV: `left,right,count`.
    pub fn write_histogram_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["left", "right", "count"])?;
        for (b, c) in self.counts.iter().enumerate() {
            w.write_record(&[self.edges[b].to_string(), self.edges[b + 1].to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV: `x,pdf`.
    pub fn write_density_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "pdf"])?;
        for (x, p) in self.grid.iter().zip(&self.pdf) {
            w.write_record(&[x.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`, falling back to the
/// standard deviation when the interquartile range vanishes.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Density of a scalar surrogate at `point`: `n` draws of `f(xi)` with
/// standard normal `xi`, histogram with `bins` bins and a smoothed density.
pub fn density_at_point<F>(f: F, d: usize, n: u64, seed: u64, bins: usize, point: Point) -> Result<DensityEstimate>
where
    F: Fn(&[f64]) -> Result<f64, ModelError> + Sync + Send,
{
    let samples = sample_scalar(f, d, n, seed)?;
    DensityEstimate::from_samples(point, samples, bins)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}
