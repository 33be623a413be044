//! Objective functionals `F` with value and Wasserstein-gradient evaluation
//! at empirical measures.
//!
//! Every functional exposes `value(cloud)` and `wgrad(cloud)`; the gradient
//! is the Wasserstein gradient evaluated at the particles, i.e. the field
//! `g` such that perturbing particle `i` by `dx_i` changes the value by
//! `(1/n) sum_i <g_i, dx_i>`. Deterministic functionals are pure functions
//! of the cloud; Monte-Carlo ones (sliced distances) are pure functions of
//! `(cloud, seed)` and redraw their projections when the scheme loop
//! advances their stream.

mod entropy;
mod interaction;
mod potential;
mod sinkhorn;
mod sliced;

pub use entropy::{
    kde_entropy_grad, kozachenko_leonenko_entropy, sample_simplex_uniform, silverman_bandwidth,
    SimplexKl,
};
pub use interaction::{InteractionEnergy, InteractionKernel, KernelShape};
pub use potential::QuadraticPotential;
pub use sinkhorn::SinkhornDivergence;
pub use sliced::{SlicedEnergyDistance, SlicedWasserstein};

use thiserror::Error;

use crate::measures::{MeasureError, ParticleCloud, VelocityField};
use crate::ot1d::OtError;

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("matrix parameter `{what}` is not symmetric positive definite")]
    NotSpd { what: &'static str },
    #[error("dimension mismatch: functional expects d={expected}, cloud has d={found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("particle {index} lies outside the open simplex")]
    OutsideSimplex { index: usize },
    #[error("particles {i} and {j} coincide; nearest-neighbor entropy estimate undefined")]
    DuplicateParticles { i: usize, j: usize },
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Value, gradient, and (for Monte-Carlo objectives) the standard error of
/// the value estimate across slices.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub value: f64,
    pub grad: VelocityField,
    pub mc_se: Option<f64>,
}

/// An objective over empirical measures.
pub trait Functional {
    fn value(&self, cloud: &ParticleCloud) -> Result<f64, FunctionalError>;

    /// Wasserstein gradient evaluated at the particles; same shape as the
    /// cloud.
    fn wgrad(&self, cloud: &ParticleCloud) -> Result<VelocityField, FunctionalError>;

    /// Value and gradient from one pass; the scheme loop calls this once
    /// per iterate. Monte-Carlo functionals share the projection draw
    /// between value and gradient, solver-backed ones share the solve.
    fn evaluate(&self, cloud: &ParticleCloud) -> Result<Evaluated, FunctionalError> {
        Ok(Evaluated {
            value: self.value(cloud)?,
            grad: self.wgrad(cloud)?,
            mc_se: None,
        })
    }

    /// Move Monte-Carlo functionals to the projection draw of the given
    /// stream. No-op for deterministic functionals.
    fn set_stream(&mut self, _stream: u64) {}

    /// Whether evaluations depend on the projection draw. Stochastic
    /// objectives get draw-matched stopping comparisons in the scheme loop.
    fn is_stochastic(&self) -> bool {
        false
    }
}

pub(crate) fn check_dim(expected: usize, cloud: &ParticleCloud) -> Result<(), FunctionalError> {
    if cloud.dim() != expected {
        return Err(FunctionalError::DimMismatch {
            expected,
            found: cloud.dim(),
        });
    }
    Ok(())
}
