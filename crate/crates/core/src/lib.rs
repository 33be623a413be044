//! Discrete-time optimization schemes over probability measures.
//!
//! The crate minimizes functionals `F` over the space of probability
//! distributions by iterating transport maps on two kinds of states:
//!
//! - **particle clouds** (`n` uniformly weighted points in `R^d`), moved by
//!   mirror descent steps `x <- grad V* (grad V(x) - tau * g(x))` or by
//!   preconditioned gradient steps `x <- x - tau * grad h*(g(x))`, with `g`
//!   the Wasserstein gradient of the objective evaluated at the particles;
//! - **Gaussian states** `(mean, covariance)`, for which entropy-regularized
//!   flows admit matrix closed forms (negative-entropy mirror steps,
//!   forward-backward splitting, heat flow).
//!
//! Modules follow that split: [`measures`] holds the state types,
//! [`functionals`] the objectives and their gradients, [`bregman`] the mirror
//! maps and Bregman divergences, [`preconditioners`] the pointwise gradient
//! transforms, [`schemes`] the iteration loop with tracing, [`bures`] the
//! Gaussian closed forms, [`ot1d`] shared one-dimensional transport and
//! Sinkhorn primitives, and [`diagnostics`] numerical verification (gradient
//! checks, Bregman axioms, smoothness probes, entropy estimators).

pub use nalgebra;

pub mod bregman;
pub mod bures;
pub mod diagnostics;
pub mod functionals;
pub mod linalg;
pub mod measures;
pub mod ot1d;
pub mod preconditioners;
pub mod rng;
pub mod schemes;

pub use bregman::{BregmanError, BregmanPotential, NewtonConfig};
pub use bures::{BuresError, GaussianFlowConfig, GaussianScheme};
pub use functionals::{Functional, FunctionalError, InteractionKernel, KernelShape};
pub use measures::{GaussianState, MeasureError, ParticleCloud, RngSeed, VelocityField};
pub use preconditioners::{Preconditioner, PreconditionerError};
pub use schemes::{Method, SchemeConfig, SchemeError, Termination, Trace};
