//! Pointwise gradient preconditioners `grad h*` for the preconditioned
//! scheme, with the dual magnitude `phi^{h*}(g) = (1/n) sum_i h*(g_i)` they
//! descend.

use nalgebra::{Cholesky, DMatrix};
use thiserror::Error;

use crate::linalg::symmetry_defect;
use crate::measures::{ParticleCloud, VelocityField};

#[derive(Debug, Error)]
pub enum PreconditionerError {
    #[error("polynomial exponent must satisfy a > 1 (got {0})")]
    BadExponent(f64),
    #[error("preconditioner matrix is not symmetric positive definite")]
    NotSpd,
    #[error("covariance preconditioning needs at least two particles (got {0})")]
    TooFewParticles(usize),
    #[error("gradient shape {field_n} x {field_d} does not match cloud {cloud_n} x {cloud_d}")]
    ShapeMismatch {
        cloud_n: usize,
        cloud_d: usize,
        field_n: usize,
        field_d: usize,
    },
}

#[derive(Debug, Clone)]
pub enum Preconditioner {
    /// `h*(g) = ||g||^2 / 2`; leaves the gradient unchanged, so the
    /// preconditioned step is plain Wasserstein gradient descent.
    Identity,
    /// `h*(g) = (||g||^a + 1)^{1/a} - 1` with `a > 1`; behaves like `||g||`
    /// for large gradients and caps the step length.
    Polynomial { a: f64 },
    /// `h*(g) = (1/2) g^T Lambda g` for a fixed SPD `Lambda`.
    MatrixQuadratic { lambda: DMatrix<f64> },
    /// `h*(g) = (1/2) g^T C(mu) g` with the biased empirical covariance of
    /// the current cloud, recomputed each step.
    Covariance,
}

impl Preconditioner {
    pub fn polynomial(a: f64) -> Result<Self, PreconditionerError> {
        if !(a > 1.0) {
            return Err(PreconditionerError::BadExponent(a));
        }
        Ok(Self::Polynomial { a })
    }

    pub fn matrix_quadratic(lambda: DMatrix<f64>) -> Result<Self, PreconditionerError> {
        if lambda.nrows() != lambda.ncols()
            || symmetry_defect(&lambda) > 1e-10
            || Cholesky::new(lambda.clone()).is_none()
        {
            return Err(PreconditionerError::NotSpd);
        }
        Ok(Self::MatrixQuadratic { lambda })
    }

    fn check(
        &self,
        cloud: &ParticleCloud,
        grad: &VelocityField,
    ) -> Result<(), PreconditionerError> {
        if grad.shape() != (cloud.len(), cloud.dim()) {
            return Err(PreconditionerError::ShapeMismatch {
                cloud_n: cloud.len(),
                cloud_d: cloud.dim(),
                field_n: grad.shape().0,
                field_d: grad.shape().1,
            });
        }
        if matches!(self, Self::Covariance) && cloud.len() < 2 {
            return Err(PreconditionerError::TooFewParticles(cloud.len()));
        }
        Ok(())
    }

    /// Biased `(1/n)` empirical covariance of the cloud.
    fn empirical_cov(cloud: &ParticleCloud) -> DMatrix<f64> {
        let n = cloud.len();
        let d = cloud.dim();
        let mean = cloud.mean();
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let z = cloud.particle(i) - &mean;
            cov += &z * z.transpose();
        }
        cov / n as f64
    }

    /// `grad h*` applied row by row: the descent direction of the
    /// preconditioned step.
    pub fn apply(
        &self,
        cloud: &ParticleCloud,
        grad: &VelocityField,
    ) -> Result<VelocityField, PreconditionerError> {
        self.check(cloud, grad)?;
        let (n, d) = grad.shape();
        let mut out = DMatrix::zeros(n, d);
        match self {
            Self::Identity => out.copy_from(grad.values()),
            Self::Polynomial { a } => {
                for i in 0..n {
                    let g = grad.row(i);
                    let norm = g.norm();
                    // grad h*(0) = 0: the formula is 0/0 there but the true
                    // gradient vanishes for a > 1.
                    if norm > 0.0 {
                        let scale = norm.powf(a - 2.0) * (norm.powf(*a) + 1.0).powf(1.0 / a - 1.0);
                        out.row_mut(i).copy_from(&(g * scale).transpose());
                    }
                }
            }
            Self::MatrixQuadratic { lambda } => {
                for i in 0..n {
                    out.row_mut(i)
                        .copy_from(&(lambda * grad.row(i)).transpose());
                }
            }
            Self::Covariance => {
                let cov = Self::empirical_cov(cloud);
                for i in 0..n {
                    out.row_mut(i).copy_from(&(&cov * grad.row(i)).transpose());
                }
            }
        }
        Ok(VelocityField::new(out))
    }

    /// Gradient magnitude in the dual geometry,
    /// `(1/n) sum_i h*(g_i)`; this is the quantity the preconditioned
    /// scheme drives down.
    pub fn magnitude(
        &self,
        cloud: &ParticleCloud,
        grad: &VelocityField,
    ) -> Result<f64, PreconditionerError> {
        self.check(cloud, grad)?;
        let n = grad.shape().0;
        let h_star_sum = match self {
            Self::Identity => (0..n).map(|i| 0.5 * grad.row(i).norm_squared()).sum::<f64>(),
            Self::Polynomial { a } => (0..n)
                .map(|i| (grad.row(i).norm().powf(*a) + 1.0).powf(1.0 / a) - 1.0)
                .sum::<f64>(),
            Self::MatrixQuadratic { lambda } => (0..n)
                .map(|i| {
                    let g = grad.row(i);
                    0.5 * (lambda * &g).dot(&g)
                })
                .sum::<f64>(),
            Self::Covariance => {
                let cov = Self::empirical_cov(cloud);
                (0..n)
                    .map(|i| {
                        let g = grad.row(i);
                        0.5 * (&cov * &g).dot(&g)
                    })
                    .sum::<f64>()
            }
        };
        Ok(h_star_sum / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{sample_gaussian, GaussianState, RngSeed};
    use nalgebra::DVector;

    fn single(g: &[f64]) -> (ParticleCloud, VelocityField) {
        let cloud = ParticleCloud::from_rows(&[&vec![0.0; g.len()]]);
        let field = VelocityField::new(DMatrix::from_row_slice(1, g.len(), g));
        (cloud, field)
    }

    #[test]
    fn polynomial_fixes_zero_gradient() {
        let (cloud, zero) = single(&[0.0, 0.0]);
        for a in [1.25, 1.5, 2.0] {
            let p = Preconditioner::polynomial(a).unwrap();
            let out = p.apply(&cloud, &zero).unwrap();
            assert_eq!(out.max_row_norm(), 0.0);
            assert_eq!(p.magnitude(&cloud, &zero).unwrap(), 0.0);
        }
    }

    #[test]
    fn polynomial_unit_gradient_values() {
        let (cloud, g) = single(&[1.0, 0.0]);
        let p = Preconditioner::polynomial(2.0).unwrap();
        let out = p.apply(&cloud, &g).unwrap();
        assert!((out.values()[(0, 0)] - 1.0 / 2.0f64.sqrt()).abs() <= 1e-12);
        assert!(out.values()[(0, 1)].abs() <= 1e-15);
        let mag = p.magnitude(&cloud, &g).unwrap();
        assert!((mag - (2.0f64.sqrt() - 1.0)).abs() <= 1e-12);
    }

    #[test]
    fn polynomial_is_continuous_at_zero() {
        let p = Preconditioner::polynomial(1.25).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=12 {
            let norm = 10f64.powi(-k);
            let (cloud, g) = single(&[norm, 0.0]);
            let out = p.apply(&cloud, &g).unwrap().max_row_norm();
            assert!(out < last, "apply norm must shrink with the gradient");
            last = out;
        }
        assert!(last <= 1e-3);
    }

    #[test]
    fn identity_magnitude_is_half_squared_norm() {
        let (cloud, g) = single(&[3.0, 4.0]);
        let p = Preconditioner::Identity;
        assert!((p.magnitude(&cloud, &g).unwrap() - 12.5).abs() <= 1e-14);
        assert_eq!(p.apply(&cloud, &g).unwrap(), g);
    }

    #[test]
    fn matrix_quadratic_applies_lambda() {
        // Lambda = Sigma = diag(100, 0.1) applied to g = (0.1, 10).
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 0.1]));
        let p = Preconditioner::matrix_quadratic(lambda).unwrap();
        let (cloud, g) = single(&[0.1, 10.0]);
        let out = p.apply(&cloud, &g).unwrap();
        assert!((out.values()[(0, 0)] - 10.0).abs() <= 1e-12);
        assert!((out.values()[(0, 1)] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn covariance_needs_two_particles() {
        let (cloud, g) = single(&[1.0]);
        assert!(matches!(
            Preconditioner::Covariance.apply(&cloud, &g),
            Err(PreconditionerError::TooFewParticles(1))
        ));
    }

    #[test]
    fn covariance_uses_biased_cloud_covariance() {
        let cloud = ParticleCloud::from_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        // Biased covariance = diag(1, 0).
        let g = VelocityField::new(DMatrix::from_row_slice(2, 2, &[2.0, 5.0, 4.0, -3.0]));
        let out = Preconditioner::Covariance.apply(&cloud, &g).unwrap();
        assert!((out.values()[(0, 0)] - 2.0).abs() <= 1e-14);
        assert_eq!(out.values()[(0, 1)], 0.0);
        assert!((out.values()[(1, 0)] - 4.0).abs() <= 1e-14);
        assert_eq!(out.values()[(1, 1)], 0.0);
    }

    #[test]
    fn apply_is_the_gradient_of_magnitude() {
        // n * central difference of magnitude reproduces apply.
        let cloud = sample_gaussian(RngSeed(33), 5, &GaussianState::standard(2)).unwrap();
        let mut g = VelocityField::new(DMatrix::zeros(5, 2));
        for (k, v) in g.values_mut().iter_mut().enumerate() {
            *v = 0.3 + 0.17 * k as f64;
        }
        let lambda = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let cases = [
            Preconditioner::Identity,
            Preconditioner::polynomial(1.5).unwrap(),
            Preconditioner::matrix_quadratic(lambda).unwrap(),
            Preconditioner::Covariance,
        ];
        let h = 1e-6;
        for p in cases {
            let applied = p.apply(&cloud, &g).unwrap();
            for i in 0..5 {
                for c in 0..2 {
                    let mut gp = g.clone();
                    let mut gm = g.clone();
                    gp.values_mut()[(i, c)] += h;
                    gm.values_mut()[(i, c)] -= h;
                    let fd = (p.magnitude(&cloud, &gp).unwrap()
                        - p.magnitude(&cloud, &gm).unwrap())
                        / (2.0 * h)
                        * 5.0;
                    let rel = (fd - applied.values()[(i, c)]).abs()
                        / applied.values()[(i, c)].abs().max(1.0);
                    assert!(rel <= 1e-5, "{p:?} fd {fd} vs {}", applied.values()[(i, c)]);
                }
            }
        }
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(Preconditioner::polynomial(1.0).is_err());
        assert!(Preconditioner::polynomial(0.5).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, -0.9, 1.0]);
        assert!(Preconditioner::matrix_quadratic(asym).is_err());
    }
}
