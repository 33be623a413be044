//! Bregman potentials, their mirror maps (forward and inverse), Bregman
//! divergence evaluation, and the damped Newton solver for potentials whose
//! mirror map has no closed-form inverse.
//!
//! A potential `phi_mu` acts on fields `T in L^2(mu_hat)`. Three families
//! are shipped:
//!
//! - [`BregmanPotential::Quadratic`]: `phi(T) = int V o T dmu` with
//!   `V(x) = (1/2) x^T P x`; `grad V(x) = P x` and `grad V*(y) = P^{-1} y`.
//! - [`BregmanPotential::SimplexEntropy`]: the entropic barrier of the open
//!   simplex, `psi(x) = sum_c x_c log x_c + s log s` with slack
//!   `s = 1 - sum_c x_c`; its conjugate gradient is the slack-aware softmax.
//! - [`BregmanPotential::Interaction`]: `phi(T) = (1/2) iint W(T(x) - T(x'))
//!   dmu dmu`. The forward map couples particles, so mirror steps invert it
//!   with Newton iterations on a dense `nd x nd` Jacobian; this is intended
//!   for a few hundred particles at most.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::functionals::InteractionKernel;
use crate::linalg::symmetry_defect;
use crate::measures::{MeasureError, ParticleCloud, VelocityField};

#[derive(Debug, Error)]
pub enum BregmanError {
    #[error("matrix parameter `{what}` is not symmetric positive definite")]
    NotSpd { what: &'static str },
    #[error("field shape {field_n} x {field_d} does not match cloud {cloud_n} x {cloud_d}")]
    ShapeMismatch {
        cloud_n: usize,
        cloud_d: usize,
        field_n: usize,
        field_d: usize,
    },
    #[error("row {index} of the field lies outside the open simplex")]
    OutsideSimplex { index: usize },
    #[error("potential has no explicit conjugate gradient; use the implicit Newton step")]
    ImplicitPotential,
    #[error("newton linear solve failed at iteration {iteration} despite ridge {ridge:.1e}")]
    NewtonSolveFailed { iteration: usize, ridge: f64 },
    #[error("newton did not reach tolerance in {iterations} iterations (residual {residual:.3e})")]
    NewtonMaxIter { iterations: usize, residual: f64 },
    #[error("newton stalled at iteration {iteration} (residual {residual:.3e}); backtracking exhausted")]
    NewtonStalled { iteration: usize, residual: f64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Damped Newton parameters for the implicit mirror step.
#[derive(Debug, Clone)]
pub struct NewtonConfig {
    /// Initial step damping, in (0, 1]; halved on residual increase.
    pub damping: f64,
    /// Residual tolerance on `max_j ||G_j||_2`.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge added to the Jacobian diagonal. Interaction Jacobians are
    /// singular along translations, the ridge regularizes exactly that
    /// direction.
    pub ridge: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            damping: 1.0,
            tol: 1e-9,
            max_iter: 50,
            ridge: 1e-8,
        }
    }
}

/// Outcome of a converged Newton solve; `residual` is the bound the output
/// actually satisfies.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub cloud: ParticleCloud,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub enum BregmanPotential {
    /// `V(x) = (1/2) x^T precision x`.
    Quadratic {
        precision: DMatrix<f64>,
        inverse: DMatrix<f64>,
    },
    /// Entropic barrier of the open simplex in `d` coordinates.
    SimplexEntropy,
    /// Interaction energy with the given kernel; implicit mirror map.
    Interaction(InteractionKernel),
}

impl BregmanPotential {
    /// Quadratic potential from its precision matrix (`Lambda^{-1}` of
    /// `V(x) = (1/2) x^T Lambda^{-1} x`).
    pub fn quadratic(precision: DMatrix<f64>) -> Result<Self, BregmanError> {
        if precision.nrows() != precision.ncols() || symmetry_defect(&precision) > 1e-10 {
            return Err(BregmanError::NotSpd { what: "precision" });
        }
        let chol =
            Cholesky::new(precision.clone()).ok_or(BregmanError::NotSpd { what: "precision" })?;
        let inverse = chol.inverse();
        Ok(Self::Quadratic { precision, inverse })
    }

    /// The `1/2 ||.||^2` potential whose mirror scheme is plain Wasserstein
    /// gradient descent.
    pub fn isotropic_quadratic(d: usize) -> Self {
        Self::Quadratic {
            precision: DMatrix::identity(d, d),
            inverse: DMatrix::identity(d, d),
        }
    }

    pub fn simplex_entropy() -> Self {
        Self::SimplexEntropy
    }

    pub fn interaction(kernel: InteractionKernel) -> Self {
        Self::Interaction(kernel)
    }

    /// Whether the conjugate mirror map has a closed form.
    pub fn explicit_inverse(&self) -> bool {
        !matches!(self, Self::Interaction(_))
    }

    fn check_field(
        cloud: &ParticleCloud,
        field: &VelocityField,
    ) -> Result<(), BregmanError> {
        if field.shape() != (cloud.len(), cloud.dim()) {
            return Err(BregmanError::ShapeMismatch {
                cloud_n: cloud.len(),
                cloud_d: cloud.dim(),
                field_n: field.shape().0,
                field_d: field.shape().1,
            });
        }
        Ok(())
    }

    /// Mirror map evaluated at the identity: `grad phi_mu(Id)` at the
    /// particles.
    pub fn forward(&self, cloud: &ParticleCloud) -> Result<VelocityField, BregmanError> {
        self.grad_at_field(cloud, &VelocityField::identity_on(cloud))
    }

    /// Mirror map evaluated at an arbitrary field `T`:
    /// `grad phi_mu(T)` row by row.
    pub fn grad_at_field(
        &self,
        cloud: &ParticleCloud,
        field: &VelocityField,
    ) -> Result<VelocityField, BregmanError> {
        Self::check_field(cloud, field)?;
        let n = cloud.len();
        let d = cloud.dim();
        let mut out = DMatrix::zeros(n, d);
        match self {
            Self::Quadratic { precision, .. } => {
                for i in 0..n {
                    out.row_mut(i)
                        .copy_from(&(precision * field.row(i)).transpose());
                }
            }
            Self::SimplexEntropy => {
                for i in 0..n {
                    let x = field.row(i);
                    let slack = 1.0 - x.sum();
                    if slack <= 0.0 || x.iter().any(|&v| v <= 0.0) {
                        return Err(BregmanError::OutsideSimplex { index: i });
                    }
                    let ln_slack = slack.ln();
                    for c in 0..d {
                        out[(i, c)] = x[c].ln() - ln_slack;
                    }
                }
            }
            Self::Interaction(kernel) => {
                for i in 0..n {
                    let ti = field.row(i);
                    let mut g = DVector::zeros(d);
                    for j in 0..n {
                        g += kernel.grad_w(&(&ti - field.row(j)));
                    }
                    out.row_mut(i).copy_from(&(g / n as f64).transpose());
                }
            }
        }
        Ok(VelocityField::new(out))
    }

    /// Pointwise conjugate mirror map `grad V*` (or `grad psi*`) applied to
    /// a dual field. Errors on the implicit interaction potential.
    pub fn inverse_pointwise(
        &self,
        field: &VelocityField,
    ) -> Result<VelocityField, BregmanError> {
        let (n, d) = field.shape();
        let mut out = DMatrix::zeros(n, d);
        match self {
            Self::Quadratic { inverse, .. } => {
                for i in 0..n {
                    out.row_mut(i)
                        .copy_from(&(inverse * field.row(i)).transpose());
                }
            }
            Self::SimplexEntropy => {
                // x_c = exp(y_c) / (1 + sum_j exp(y_j)), max-shifted; the
                // implicit slack coordinate corresponds to logit 0.
                for i in 0..n {
                    let y = field.row(i);
                    let hi = y.iter().fold(0.0f64, |acc, &v| acc.max(v));
                    let mut denom = (-hi).exp();
                    for c in 0..d {
                        denom += (y[c] - hi).exp();
                    }
                    for c in 0..d {
                        out[(i, c)] = (y[c] - hi).exp() / denom;
                    }
                }
            }
            Self::Interaction(_) => return Err(BregmanError::ImplicitPotential),
        }
        Ok(VelocityField::new(out))
    }

    /// Bregman divergence `d_phi(T, S)` between two fields over the cloud.
    ///
    /// Potential-type variants integrate the pointwise divergence of `V`;
    /// the interaction variant integrates the kernel divergence of pairwise
    /// differences.
    pub fn divergence(
        &self,
        cloud: &ParticleCloud,
        t: &VelocityField,
        s: &VelocityField,
    ) -> Result<f64, BregmanError> {
        Self::check_field(cloud, t)?;
        Self::check_field(cloud, s)?;
        let n = cloud.len();
        match self {
            Self::Quadratic { precision, .. } => {
                let v = |x: &DVector<f64>| 0.5 * (precision * x).dot(x);
                let mut acc = 0.0;
                for i in 0..n {
                    let (a, b) = (t.row(i), s.row(i));
                    acc += v(&a) - v(&b) - (precision * &b).dot(&(&a - &b));
                }
                Ok(acc / n as f64)
            }
            Self::SimplexEntropy => {
                let psi = |x: &DVector<f64>| -> Result<f64, BregmanError> {
                    let slack = 1.0 - x.sum();
                    if slack <= 0.0 || x.iter().any(|&v| v <= 0.0) {
                        return Err(BregmanError::OutsideSimplex { index: usize::MAX });
                    }
                    Ok(x.iter().map(|&v| v * v.ln()).sum::<f64>() + slack * slack.ln())
                };
                let mut acc = 0.0;
                for i in 0..n {
                    let (a, b) = (t.row(i), s.row(i));
                    let grad_b = {
                        let slack = 1.0 - b.sum();
                        if slack <= 0.0 || b.iter().any(|&v| v <= 0.0) {
                            return Err(BregmanError::OutsideSimplex { index: i });
                        }
                        DVector::from_fn(b.len(), |c, _| b[c].ln() - slack.ln())
                    };
                    acc += psi(&a).map_err(|_| BregmanError::OutsideSimplex { index: i })?
                        - psi(&b).map_err(|_| BregmanError::OutsideSimplex { index: i })?
                        - grad_b.dot(&(&a - &b));
                }
                Ok(acc / n as f64)
            }
            Self::Interaction(kernel) => {
                let dw = |a: &DVector<f64>, b: &DVector<f64>| {
                    kernel.w(a) - kernel.w(b) - kernel.grad_w(b).dot(&(a - b))
                };
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let a = t.row(i) - t.row(j);
                        let b = s.row(i) - s.row(j);
                        acc += dw(&a, &b);
                    }
                }
                Ok(acc / (2.0 * (n * n) as f64))
            }
        }
    }
}

/// Solve `grad phi_mu(T) = rhs` for an interaction potential by damped
/// Newton iterations on the stacked particle positions.
///
/// `G_j(x) = (1/n) sum_l grad W(x_j - x_l) - rhs_j`; the dense Jacobian has
/// blocks `dG_j/dx_j = (1/n) sum_{l != j} hess W(x_j - x_l)` and
/// `dG_j/dx_i = -(1/n) hess W(x_j - x_i)`. The update is
/// `x <- x - gamma * solve(J + ridge I, G)` starting from the input cloud,
/// with `gamma` halved (up to 20 times) whenever the residual increases.
pub fn newton_implicit_step(
    kernel: &InteractionKernel,
    cloud: &ParticleCloud,
    rhs: &VelocityField,
    cfg: &NewtonConfig,
) -> Result<NewtonOutcome, BregmanError> {
    assert!(cfg.tol > 0.0, "newton tolerance must be positive");
    assert!(
        cfg.damping > 0.0 && cfg.damping <= 1.0,
        "damping must lie in (0, 1]"
    );
    BregmanPotential::check_field(cloud, rhs)?;
    let n = cloud.len();
    let d = cloud.dim();
    let potential = BregmanPotential::interaction(kernel.clone());

    let residual_of = |x: &ParticleCloud| -> Result<(VelocityField, f64), BregmanError> {
        let fwd = potential.grad_at_field(x, &VelocityField::identity_on(x))?;
        let g = VelocityField::new(fwd.values() - rhs.values());
        let r = g.max_row_norm();
        Ok((g, r))
    };

    let mut x = cloud.clone();
    let (mut g, mut residual) = residual_of(&x)?;
    if residual <= cfg.tol {
        return Ok(NewtonOutcome {
            cloud: x,
            residual,
            iterations: 0,
        });
    }

    for iteration in 1..=cfg.max_iter {
        // Assemble the nd x nd Jacobian.
        let mut jac = DMatrix::zeros(n * d, n * d);
        for j in 0..n {
            let xj = x.particle(j);
            let mut diag = DMatrix::zeros(d, d);
            for l in 0..n {
                if l == j {
                    continue;
                }
                let h = kernel.hess_w(&(&xj - x.particle(l))) / n as f64;
                diag += &h;
                // dG_j / dx_l = -(1/n) hess W(x_j - x_l)
                jac.view_mut((j * d, l * d), (d, d)).copy_from(&(-h));
            }
            jac.view_mut((j * d, j * d), (d, d)).copy_from(&diag);
        }
        for k in 0..n * d {
            jac[(k, k)] += cfg.ridge;
        }

        let mut rhs_vec = DVector::zeros(n * d);
        for j in 0..n {
            for c in 0..d {
                rhs_vec[j * d + c] = g.values()[(j, c)];
            }
        }
        let step = jac
            .lu()
            .solve(&rhs_vec)
            .ok_or(BregmanError::NewtonSolveFailed {
                iteration,
                ridge: cfg.ridge,
            })?;

        // Backtracking: halve the damping until the residual decreases.
        let mut gamma = cfg.damping;
        let mut accepted = None;
        for _ in 0..=20 {
            let mut candidate = x.positions().clone();
            for j in 0..n {
                for c in 0..d {
                    candidate[(j, c)] -= gamma * step[j * d + c];
                }
            }
            let candidate = ParticleCloud::new(candidate)?;
            let (cg, cr) = residual_of(&candidate)?;
            if cr < residual {
                accepted = Some((candidate, cg, cr));
                break;
            }
            gamma *= 0.5;
        }
        match accepted {
            Some((cx, cg, cr)) => {
                x = cx;
                g = cg;
                residual = cr;
            }
            None => {
                return Err(BregmanError::NewtonStalled {
                    iteration,
                    residual,
                })
            }
        }
        if residual <= cfg.tol {
            return Ok(NewtonOutcome {
                cloud: x,
                residual,
                iterations: iteration,
            });
        }
    }
    Err(BregmanError::NewtonMaxIter {
        iterations: cfg.max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{Functional, QuadraticPotential};
    use crate::measures::{sample_gaussian, GaussianState, RngSeed};
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_field(seed: u64, n: usize, d: usize, scale: f64) -> VelocityField {
        let mut rng = rng_from(seed);
        VelocityField::new(DMatrix::from_fn(n, d, |_, _| {
            rng.random_range(-scale..scale)
        }))
    }

    #[test]
    fn simplex_forward_vanishes_at_uniform_point() {
        let phi = BregmanPotential::simplex_entropy();
        let cloud = ParticleCloud::from_rows(&[&[1.0 / 3.0, 1.0 / 3.0]]);
        let f = phi.forward(&cloud).unwrap();
        assert!(f.max_row_norm() <= 1e-14);
    }

    #[test]
    fn simplex_inverse_of_zero_is_uniform() {
        let phi = BregmanPotential::simplex_entropy();
        let field = VelocityField::new(DMatrix::zeros(1, 2));
        let x = phi.inverse_pointwise(&field).unwrap();
        assert!((x.values()[(0, 0)] - 1.0 / 3.0).abs() <= 1e-15);
        assert!((x.values()[(0, 1)] - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn simplex_conjugacy_round_trip() {
        let phi = BregmanPotential::simplex_entropy();
        let cloud = crate::functionals::sample_simplex_uniform(3, 40, 3);
        let fwd = phi.forward(&cloud).unwrap();
        let back = phi.inverse_pointwise(&fwd).unwrap();
        assert!(
            (back.values() - cloud.positions()).norm() <= 1e-12,
            "conjugate pair does not invert"
        );
    }

    #[test]
    fn simplex_rejects_exterior_points() {
        let phi = BregmanPotential::simplex_entropy();
        let cloud = ParticleCloud::from_rows(&[&[0.7, 0.4]]);
        assert!(matches!(
            phi.forward(&cloud),
            Err(BregmanError::OutsideSimplex { index: 0 })
        ));
    }

    #[test]
    fn quadratic_identity_forward_is_positions() {
        let phi = BregmanPotential::isotropic_quadratic(2);
        let cloud = ParticleCloud::from_rows(&[&[0.5, -2.0], &[1.0, 3.0]]);
        let f = phi.forward(&cloud).unwrap();
        assert_eq!(f.values(), cloud.positions());
    }

    #[test]
    fn quadratic_inverse_scales_by_lambda() {
        // precision = Lambda^{-1} = diag(1/2, 1); inverse multiplies by
        // Lambda = diag(2, 1).
        let phi = BregmanPotential::quadratic(DMatrix::from_diagonal(&DVector::from_vec(vec![
            0.5, 1.0,
        ])))
        .unwrap();
        let field = VelocityField::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        let out = phi.inverse_pointwise(&field).unwrap();
        assert!((out.values()[(0, 0)] - 2.0).abs() <= 1e-14);
        assert!((out.values()[(0, 1)] - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn quadratic_conjugacy_round_trip() {
        let mut rng = rng_from(8);
        let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let precision = &m * m.transpose() + DMatrix::identity(3, 3);
        let phi = BregmanPotential::quadratic(precision).unwrap();
        let cloud = sample_gaussian(RngSeed(12), 20, &GaussianState::standard(3)).unwrap();
        let back = phi
            .inverse_pointwise(&phi.forward(&cloud).unwrap())
            .unwrap();
        assert!((back.values() - cloud.positions()).norm() <= 1e-10);
    }

    #[test]
    fn interaction_forward_matches_two_particle_sum() {
        let phi = BregmanPotential::interaction(InteractionKernel::quadratic());
        let cloud = ParticleCloud::from_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let f = phi.forward(&cloud).unwrap();
        assert!((f.row(0) - DVector::from_vec(vec![1.0, 0.0])).norm() <= 1e-14);
        assert!((f.row(1) - DVector::from_vec(vec![-1.0, 0.0])).norm() <= 1e-14);
    }

    #[test]
    fn interaction_inverse_is_implicit() {
        let phi = BregmanPotential::interaction(InteractionKernel::quadratic());
        let field = VelocityField::new(DMatrix::zeros(2, 2));
        assert!(matches!(
            phi.inverse_pointwise(&field),
            Err(BregmanError::ImplicitPotential)
        ));
    }

    #[test]
    fn divergence_of_field_with_itself_is_zero() {
        let cloud = sample_gaussian(RngSeed(14), 8, &GaussianState::standard(2)).unwrap();
        let t = random_field(4, 8, 2, 2.0);
        for phi in [
            BregmanPotential::isotropic_quadratic(2),
            BregmanPotential::interaction(InteractionKernel::quartic()),
        ] {
            assert_eq!(phi.divergence(&cloud, &t, &t).unwrap(), 0.0);
        }
    }

    #[test]
    fn quadratic_divergence_recovers_l2_norm() {
        let cloud = sample_gaussian(RngSeed(15), 10, &GaussianState::standard(2)).unwrap();
        let t = random_field(5, 10, 2, 1.0);
        let s = random_field(6, 10, 2, 1.0);
        let phi = BregmanPotential::isotropic_quadratic(2);
        let div = phi.divergence(&cloud, &t, &s).unwrap();
        let diff = VelocityField::new(t.values() - s.values());
        let expect = 0.5 * diff.l2_inner(&diff);
        assert!((div - expect).abs() <= 1e-12);
    }

    #[test]
    fn anisotropic_quadratic_divergence_is_weighted_l2() {
        // d_V(a, b) = (1/2)||a - b||^2_P summed over particles.
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 10.0]));
        let phi = BregmanPotential::quadratic(p.clone()).unwrap();
        let cloud = sample_gaussian(RngSeed(16), 6, &GaussianState::standard(2)).unwrap();
        let t = random_field(7, 6, 2, 1.5);
        let s = random_field(8, 6, 2, 1.5);
        let div = phi.divergence(&cloud, &t, &s).unwrap();
        let mut expect = 0.0;
        for i in 0..6 {
            let z = t.row(i) - s.row(i);
            expect += 0.5 * (&p * &z).dot(&z);
        }
        expect /= 6.0;
        assert!((div - expect).abs() <= 1e-12);
    }

    #[test]
    fn divergence_is_nonnegative_and_separating() {
        let cloud = sample_gaussian(RngSeed(17), 6, &GaussianState::standard(2)).unwrap();
        let potentials = [
            BregmanPotential::isotropic_quadratic(2),
            BregmanPotential::quadratic(DMatrix::from_diagonal(&DVector::from_vec(vec![
                3.0, 0.2,
            ])))
            .unwrap(),
            BregmanPotential::interaction(InteractionKernel::quartic()),
        ];
        let mut rng = rng_from(100);
        for _ in 0..200 {
            let t = random_field(rng.random(), 6, 2, 2.0);
            let s = random_field(rng.random(), 6, 2, 2.0);
            for phi in &potentials {
                let div = phi.divergence(&cloud, &t, &s).unwrap();
                assert!(div >= -1e-12, "negative divergence {div}");
            }
        }
        // Separation for the strictly convex potential-type variants.
        let t = random_field(1, 6, 2, 2.0);
        let mut s = t.clone();
        s.values_mut()[(3, 1)] += 1e-3;
        for phi in &potentials[..2] {
            assert!(phi.divergence(&cloud, &t, &s).unwrap() > 0.0);
        }
    }

    #[test]
    fn three_point_identity_holds_for_potential_types() {
        let cloud = sample_gaussian(RngSeed(18), 7, &GaussianState::standard(3)).unwrap();
        let p = {
            let mut rng = rng_from(2);
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            &m * m.transpose() + DMatrix::identity(3, 3)
        };
        let phi = BregmanPotential::quadratic(p).unwrap();
        for seed in 0..50u64 {
            let s = random_field(seed * 3 + 1, 7, 3, 2.0);
            let t = random_field(seed * 3 + 2, 7, 3, 2.0);
            let u = random_field(seed * 3 + 3, 7, 3, 2.0);
            let lhs = phi.divergence(&cloud, &s, &u).unwrap()
                - phi.divergence(&cloud, &s, &t).unwrap()
                - phi.divergence(&cloud, &t, &u).unwrap();
            let grad_t = phi.grad_at_field(&cloud, &t).unwrap();
            let grad_u = phi.grad_at_field(&cloud, &u).unwrap();
            let gap = VelocityField::new(grad_t.values() - grad_u.values());
            let dir = VelocityField::new(s.values() - t.values());
            let rhs = gap.l2_inner(&dir);
            assert!((lhs - rhs).abs() <= 1e-10, "three-point identity off by {}", lhs - rhs);
        }
    }

    #[test]
    fn newton_fixed_point_returns_input() {
        let kernel = InteractionKernel::quartic();
        let cloud = sample_gaussian(RngSeed(20), 12, &GaussianState::standard(2)).unwrap();
        let phi = BregmanPotential::interaction(kernel.clone());
        let rhs = phi.forward(&cloud).unwrap();
        let out = newton_implicit_step(&kernel, &cloud, &rhs, &NewtonConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.cloud, cloud);
    }

    #[test]
    fn newton_quartic_reaches_tight_residual() {
        // Mirror-step right-hand side: forward - tau * potential gradient.
        let kernel = InteractionKernel::quartic();
        let cloud = sample_gaussian(RngSeed(21), 10, &GaussianState::standard(2)).unwrap();
        let phi = BregmanPotential::interaction(kernel.clone());
        let fwd = phi.forward(&cloud).unwrap();
        let f = QuadraticPotential::isotropic(2);
        let g = f.wgrad(&cloud).unwrap();
        let mut rhs = VelocityField::new(fwd.values() - 0.1 * g.values());
        // Project out the translation component; interaction mirror maps
        // only reach mean-free right-hand sides.
        let mean = rhs.values().row_sum() / 10.0;
        for mut row in rhs.values_mut().row_iter_mut() {
            row -= &mean;
        }
        let cfg = NewtonConfig {
            tol: 1e-8,
            ..NewtonConfig::default()
        };
        let out = newton_implicit_step(&kernel, &cloud, &rhs, &cfg).unwrap();
        assert!(out.residual <= 1e-8);
        assert!(out.iterations <= 50);
        // The reported residual is the one the output satisfies.
        let check = phi.forward(&out.cloud).unwrap();
        let g = VelocityField::new(check.values() - rhs.values());
        assert!((g.max_row_norm() - out.residual).abs() <= 1e-14);
    }

    #[test]
    fn newton_respects_max_iter() {
        let kernel = InteractionKernel::quartic();
        let cloud = sample_gaussian(RngSeed(22), 8, &GaussianState::standard(2)).unwrap();
        let phi = BregmanPotential::interaction(kernel.clone());
        let fwd = phi.forward(&cloud).unwrap();
        let rhs = VelocityField::new(fwd.values() * 1.7);
        let cfg = NewtonConfig {
            max_iter: 1,
            tol: 1e-14,
            ..NewtonConfig::default()
        };
        match newton_implicit_step(&kernel, &cloud, &rhs, &cfg) {
            Err(BregmanError::NewtonMaxIter {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 1);
                assert!(residual.is_finite());
            }
            other => panic!("expected max-iter diagnostic, got {other:?}"),
        }
    }
}
