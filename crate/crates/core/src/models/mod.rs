//! Stochastic models: maps from a realization `xi` of the input Gaussian
//! variables to a quantity of interest over declared spatial points.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::ModelError;
use crate::polychaos::Point;

pub mod diffusion;
pub mod synthetic;

pub use diffusion::{DiffusionModel, DiffusionProblem};
pub use synthetic::{Link, SyntheticModel};

pub trait StochasticModel: Sync + Send {
    fn stochastic_dim(&self) -> usize;

    fn spatial_points(&self) -> &[Point];

    /// QoI at every spatial point for one realization. Counts as one
    /// evaluation.
    fn evaluate(&self, xi: &[f64]) -> Result<Vec<f64>, ModelError>;

    /// Number of evaluations performed so far.
    fn evaluations(&self) -> u64;
}

/// Thread-safe evaluation counter.
#[derive(Debug, Default)]
pub struct EvalCounter(AtomicU64);

impl EvalCounter {
    pub fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

impl Clone for EvalCounter {
    fn clone(&self) -> Self {
        Self(AtomicU64::new(self.get()))
    }
}

/// The model with input standard deviation `tau * sigma_max`: evaluates the
/// inner model at `tau * xi`.
pub struct TauScaled<'a, M: ?Sized> {
    inner: &'a M,
    tau: f64,
}

impl<'a, M: StochasticModel + ?Sized> TauScaled<'a, M> {
    pub fn new(inner: &'a M, tau: f64) -> Self {
        Self { inner, tau }
    }
}

impl<M: StochasticModel + ?Sized> StochasticModel for TauScaled<'_, M> {
    fn stochastic_dim(&self) -> usize {
        self.inner.stochastic_dim()
    }

    fn spatial_points(&self) -> &[Point] {
        self.inner.spatial_points()
    }

    fn evaluate(&self, xi: &[f64]) -> Result<Vec<f64>, ModelError> {
        let scaled: Vec<f64> = xi.iter().map(|x| self.tau * x).collect();
        self.inner.evaluate(&scaled)
    }

    fn evaluations(&self) -> u64 {
        self.inner.evaluations()
    }
}

pub(crate) fn check_input(expected: usize, xi: &[f64]) -> Result<(), ModelError> {
    if xi.len() != expected {
        return Err(ModelError::DimensionMismatch {
            expected,
            got: xi.len(),
        });
    }
    if xi.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite("model input"));
    }
    Ok(())
}
