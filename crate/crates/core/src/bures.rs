//! Closed-form Gaussian flows for KL-type objectives on the
//! Bures-Wasserstein space.
//!
//! For `F(mu) = int V dmu + H(mu)` with a Gaussian target `N(m, Sigma)`,
//! several discrete schemes stay Gaussian and reduce to matrix recursions
//! on `(mean, covariance)`:
//!
//! - **NEM** (negative-entropy mirror step, zero means):
//!   `Sigma_{k+1}^{-1} = A Sigma_k A` with
//!   `A = (1 - tau) Sigma_k^{-1} + tau Sigma^{-1}`;
//! - **heat flow** (quadratic potential, entropy objective):
//!   `Sigma_{k+1} = Sigma_k / (1 - tau)^2`;
//! - **FB / PFB** (forward step on the potential, Bregman-proximal backward
//!   step on the entropy; PFB picks the ideal preconditioner
//!   `Lambda = Sigma`);
//! - **KLM** (KL-divergence mirror step, solved through a per-eigenvalue
//!   quadratic; may diverge, reported as an error).
//!
//! FB, PFB and KLM are derived under commuting matrices; inputs are checked
//! against a relative commutator tolerance and computed in a shared
//! eigenbasis. Non-commuting inputs are rejected, never silently
//! approximated.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{commutator_rel, min_eigenvalue, shared_eigenbasis, symmetrize, symmetry_defect};
use crate::measures::{GaussianState, MeasureError};

/// Relative Frobenius tolerance on commutators for the eigenbasis schemes.
pub const COMMUTE_TOL: f64 = 1e-8;

/// Eigenvalue clamp applied before square roots.
const SQRT_CLAMP: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum BuresError {
    #[error("matrix `{what}` is not symmetric positive definite")]
    NotSpd { what: &'static str },
    #[error("dimension mismatch between state ({state}) and parameters ({params})")]
    DimMismatch { state: usize, params: usize },
    #[error("matrices `{pair}` do not commute (relative commutator {rel:.3e} > {COMMUTE_TOL:.0e})")]
    NonCommuting { pair: &'static str, rel: f64 },
    #[error("update lost positive definiteness in `{what}`")]
    LossOfPositivity { what: &'static str },
    #[error("KLM diverged: discriminant eigenvalue {index} is {discriminant:.3e} < 0")]
    KlmDiverged { index: usize, discriminant: f64 },
    #[error("heat step requires tau in [0, 1) (got {0})")]
    HeatTau(f64),
    #[error("NEM assumes zero means (got mean norm {0:.3e})")]
    NonZeroMean(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaussianScheme {
    Nem,
    Heat,
    Fb,
    Pfb,
    Klm,
}

/// Target, Bregman matrix, step size and scheme tag for a Gaussian flow.
#[derive(Debug, Clone)]
pub struct GaussianFlowConfig {
    pub target: GaussianState,
    /// Bregman / preconditioner matrix `Lambda` of FB and KLM. PFB ignores
    /// it and uses the target covariance.
    pub lambda: DMatrix<f64>,
    pub tau: f64,
    pub scheme: GaussianScheme,
}

impl GaussianFlowConfig {
    pub fn new(target: GaussianState, scheme: GaussianScheme, tau: f64) -> Self {
        let d = target.dim();
        Self {
            target,
            lambda: DMatrix::identity(d, d),
            tau,
            scheme,
        }
    }

    pub fn with_lambda(mut self, lambda: DMatrix<f64>) -> Self {
        self.lambda = lambda;
        self
    }

    fn effective_lambda(&self) -> DMatrix<f64> {
        match self.scheme {
            GaussianScheme::Pfb => self.target.cov().clone(),
            _ => self.lambda.clone(),
        }
    }
}

fn check_spd(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, nalgebra::Dyn>, BuresError> {
    if m.nrows() != m.ncols() || symmetry_defect(m) > 1e-10 {
        return Err(BuresError::NotSpd { what });
    }
    Cholesky::new(m.clone()).ok_or(BuresError::NotSpd { what })
}

fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>, BuresError> {
    Ok(check_spd(m, what)?.inverse())
}

fn finalize_cov(m: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>, BuresError> {
    let sym = symmetrize(&m);
    if Cholesky::new(sym.clone()).is_none() {
        return Err(BuresError::LossOfPositivity { what });
    }
    Ok(sym)
}

/// Negative-entropy mirror step on a zero-mean Gaussian:
/// `Sigma_{k+1}^{-1} = A^T Sigma_k A`, `A = (1 - tau) Sigma_k^{-1}
/// + tau Sigma^{-1}`. Valid for arbitrary (non-commuting) covariances.
pub fn nem_step(
    sigma_k: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    tau: f64,
) -> Result<DMatrix<f64>, BuresError> {
    if sigma_k.nrows() != sigma.nrows() {
        return Err(BuresError::DimMismatch {
            state: sigma_k.nrows(),
            params: sigma.nrows(),
        });
    }
    let sigma_k_inv = spd_inverse(sigma_k, "sigma_k")?;
    let sigma_inv = spd_inverse(sigma, "sigma")?;
    let a = symmetrize(&(sigma_k_inv * (1.0 - tau) + sigma_inv * tau));
    let next_inv = symmetrize(&(a.transpose() * sigma_k * a));
    let next = spd_inverse(&next_inv, "sigma_{k+1}^{-1}")
        .map_err(|_| BuresError::LossOfPositivity { what: "nem covariance" })?;
    finalize_cov(next, "nem covariance")
}

/// Heat-flow covariance update `Sigma_k / (1 - tau)^2`, requiring
/// `0 <= tau < 1`.
pub fn heat_step(sigma_k: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>, BuresError> {
    if !(0.0..1.0).contains(&tau) {
        return Err(BuresError::HeatTau(tau));
    }
    check_spd(sigma_k, "sigma_k")?;
    Ok(sigma_k / (1.0 - tau).powi(2))
}

/// Negative entropy of `N(0, Sigma)`:
/// `-(d/2) log(2 pi e) - (1/2) log det Sigma`.
pub fn gaussian_neg_entropy(sigma: &DMatrix<f64>) -> Result<f64, BuresError> {
    let chol = check_spd(sigma, "sigma")?;
    let d = sigma.nrows() as f64;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * d * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() - 0.5 * logdet)
}

/// `KL(a || b)` between Gaussians.
pub fn kl_gaussian(a: &GaussianState, b: &GaussianState) -> Result<f64, BuresError> {
    if a.dim() != b.dim() {
        return Err(BuresError::DimMismatch {
            state: a.dim(),
            params: b.dim(),
        });
    }
    let d = a.dim() as f64;
    let chol_b = check_spd(b.cov(), "cov_b")?;
    let chol_a = check_spd(a.cov(), "cov_a")?;
    let b_inv = chol_b.inverse();
    let logdet_b = 2.0 * chol_b.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let logdet_a = 2.0 * chol_a.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let dm = b.mean() - a.mean();
    let quad = (&b_inv * &dm).dot(&dm);
    let trace = (&b_inv * a.cov()).trace();
    Ok(0.5 * (trace - d + quad + logdet_b - logdet_a))
}

struct EigenbasisView {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    lambda: DVector<f64>,
    sigma_k: DVector<f64>,
}

/// Check commutators and express `(Sigma, Lambda, Sigma_k)` in a shared
/// eigenbasis.
fn commuting_view(
    sigma: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    sigma_k: &DMatrix<f64>,
) -> Result<EigenbasisView, BuresError> {
    let rel_ls = commutator_rel(lambda, sigma);
    if rel_ls > COMMUTE_TOL {
        return Err(BuresError::NonCommuting {
            pair: "lambda, sigma",
            rel: rel_ls,
        });
    }
    let rel_ks = commutator_rel(sigma_k, sigma);
    if rel_ks > COMMUTE_TOL {
        return Err(BuresError::NonCommuting {
            pair: "sigma_k, sigma",
            rel: rel_ks,
        });
    }
    let rel_kl = commutator_rel(sigma_k, lambda);
    if rel_kl > COMMUTE_TOL {
        return Err(BuresError::NonCommuting {
            pair: "sigma_k, lambda",
            rel: rel_kl,
        });
    }
    let (u, diags) = shared_eigenbasis(&[sigma, lambda, sigma_k], 1e-6).ok_or(
        BuresError::NonCommuting {
            pair: "family",
            rel: rel_ls.max(rel_ks).max(rel_kl),
        },
    )?;
    Ok(EigenbasisView {
        u,
        sigma: diags[0].clone(),
        lambda: diags[1].clone(),
        sigma_k: diags[2].clone(),
    })
}

fn check_dims(state: &GaussianState, cfg: &GaussianFlowConfig) -> Result<(), BuresError> {
    if state.dim() != cfg.target.dim() || cfg.lambda.nrows() != state.dim() {
        return Err(BuresError::DimMismatch {
            state: state.dim(),
            params: cfg.target.dim(),
        });
    }
    Ok(())
}

/// Mean update shared by the FB and KLM schemes:
/// `m_{k+1} = (I - tau Lambda Sigma^{-1}) m_k + tau Lambda Sigma^{-1} m`,
/// evaluated in the shared eigenbasis.
fn affine_mean_update(
    view: &EigenbasisView,
    mean_k: &DVector<f64>,
    mean_target: &DVector<f64>,
    tau: f64,
) -> DVector<f64> {
    let mk = view.u.transpose() * mean_k;
    let mt = view.u.transpose() * mean_target;
    let out = DVector::from_fn(mk.len(), |i, _| {
        let rate = tau * view.lambda[i] / view.sigma[i];
        (1.0 - rate) * mk[i] + rate * mt[i]
    });
    &view.u * out
}

/// Forward-backward step: explicit step on the quadratic potential followed
/// by the Bregman-proximal step on the entropy, in closed form. PFB is the
/// same update with `Lambda = Sigma`.
pub fn fb_step(state: &GaussianState, cfg: &GaussianFlowConfig) -> Result<GaussianState, BuresError> {
    check_dims(state, cfg)?;
    let lambda = cfg.effective_lambda();
    check_spd(&lambda, "lambda")?;
    let tau = cfg.tau;
    let view = commuting_view(cfg.target.cov(), &lambda, state.cov())?;
    let d = state.dim();

    let mut s_next = DVector::zeros(d);
    for i in 0..d {
        let rate = 1.0 - tau * view.lambda[i] / view.sigma[i];
        let s_forward = rate * rate * view.sigma_k[i];
        if s_forward <= 0.0 {
            return Err(BuresError::LossOfPositivity {
                what: "forward covariance",
            });
        }
        let arg = (s_forward * (4.0 * tau * view.lambda[i] + s_forward)).max(SQRT_CLAMP);
        s_next[i] = 0.5 * (s_forward + 2.0 * tau * view.lambda[i] + arg.sqrt());
    }
    let cov = finalize_cov(
        &view.u * DMatrix::from_diagonal(&s_next) * view.u.transpose(),
        "fb covariance",
    )?;
    let mean = affine_mean_update(&view, state.mean(), cfg.target.mean(), tau);
    Ok(GaussianState::new(mean, cov)?)
}

/// KL-mirror step: per eigenvalue, solve
/// `s^2 - c s + lambda^2 = 0` with
/// `c = (1 - tau l/s)^2 s_k + 2 tau l + 2 tau (1 - tau) l^2 / s
///  + (1 - tau)^2 l^2 / s_k`,
/// taking the plus root (it preserves the `tau = 0` fixed point whenever
/// `s_k >= l`). A negative discriminant is the scheme diverging and is
/// reported as an error.
pub fn klm_step(
    state: &GaussianState,
    cfg: &GaussianFlowConfig,
) -> Result<GaussianState, BuresError> {
    check_dims(state, cfg)?;
    let lambda = cfg.effective_lambda();
    check_spd(&lambda, "lambda")?;
    let tau = cfg.tau;
    let view = commuting_view(cfg.target.cov(), &lambda, state.cov())?;
    let d = state.dim();

    let mut s_next = DVector::zeros(d);
    for i in 0..d {
        let (s, l, sk) = (view.sigma[i], view.lambda[i], view.sigma_k[i]);
        let rate = 1.0 - tau * l / s;
        let c = rate * rate * sk
            + 2.0 * tau * l
            + 2.0 * tau * (1.0 - tau) * l * l / s
            + (1.0 - tau) * (1.0 - tau) * l * l / sk;
        let disc = c * c - 4.0 * l * l;
        if disc < -1e-12 * c * c {
            return Err(BuresError::KlmDiverged {
                index: i,
                discriminant: disc,
            });
        }
        s_next[i] = 0.5 * (c + disc.max(0.0).sqrt());
    }
    let cov = finalize_cov(
        &view.u * DMatrix::from_diagonal(&s_next) * view.u.transpose(),
        "klm covariance",
    )?;
    let mean = affine_mean_update(&view, state.mean(), cfg.target.mean(), tau);
    Ok(GaussianState::new(mean, cov)?)
}

/// Dispatch one step of the configured scheme. NEM and the heat flow reject
/// nonzero means (their covariance recursions assume centered states).
pub fn flow_step(state: &GaussianState, cfg: &GaussianFlowConfig) -> Result<GaussianState, BuresError> {
    check_dims(state, cfg)?;
    match cfg.scheme {
        GaussianScheme::Nem => {
            let mean_norm = state.mean().norm().max(cfg.target.mean().norm());
            if mean_norm > 1e-12 {
                return Err(BuresError::NonZeroMean(mean_norm));
            }
            let cov = nem_step(state.cov(), cfg.target.cov(), cfg.tau)?;
            Ok(GaussianState::new(state.mean().clone(), cov)?)
        }
        GaussianScheme::Heat => {
            let cov = heat_step(state.cov(), cfg.tau)?;
            Ok(GaussianState::new(state.mean().clone(), cov)?)
        }
        GaussianScheme::Fb | GaussianScheme::Pfb => fb_step(state, cfg),
        GaussianScheme::Klm => klm_step(state, cfg),
    }
}

/// Diagnostic for the relative-smoothness condition
/// `(1 - tau) Sigma_{k+1} Sigma_k^{-1} + tau Sigma_{k+1} Sigma^{-1} >= 0`
/// along a step; monitored but never enforced.
pub fn relative_smoothness_ok(
    sigma_next: &DMatrix<f64>,
    sigma_k: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    tau: f64,
) -> Result<bool, BuresError> {
    let inv_k = spd_inverse(sigma_k, "sigma_k")?;
    let inv = spd_inverse(sigma, "sigma")?;
    let m = symmetrize(&(sigma_next * inv_k * (1.0 - tau) + sigma_next * inv * tau));
    Ok(min_eigenvalue(&m) >= -1e-12)
}
