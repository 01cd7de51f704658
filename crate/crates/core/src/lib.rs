//! Epistemic uncertainty quantification by post-processing a single
//! aleatoric generalized polynomial chaos (gPC) surrogate.
//!
//! The offline stage builds a gPC expansion of a model's QoI at the maximal
//! input standard deviation `sigma_max` with a Smolyak sparse grid. The
//! online stage maps it to the surrogate at any `sigma = tau * sigma_max`
//! through a linear change of basis, without further model evaluations.
//! An optional domain-decomposition stage reduces the stochastic dimension
//! per subdomain using a coarse degree-1 solution.

pub mod ddreduce;
pub mod epistemic;
pub mod error;
pub mod mcref;
pub mod models;
pub mod par;
pub mod polychaos;
pub mod randfield;
pub mod sparsegrid;

pub use error::{Error, ModelError, Result};
pub use models::StochasticModel;
pub use polychaos::{GpcExpansion, Moments, MultiIndex, Point};
pub use sparsegrid::QuadratureRule;
