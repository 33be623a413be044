//! Quadratic potential energy `F(mu) = int V dmu`,
//! `V(x) = (1/2)(x - m)^T P (x - m)` with SPD precision `P`.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{check_dim, Functional, FunctionalError};
use crate::linalg::symmetry_defect;
use crate::measures::{ParticleCloud, VelocityField};

#[derive(Debug, Clone)]
pub struct QuadraticPotential {
    precision: DMatrix<f64>,
    shift: DVector<f64>,
}

impl QuadraticPotential {
    /// `V(x) = (1/2) x^T precision x`.
    pub fn centered(precision: DMatrix<f64>) -> Result<Self, FunctionalError> {
        let d = precision.nrows();
        Self::new(precision, DVector::zeros(d))
    }

    /// `V(x) = (1/2)(x - shift)^T precision (x - shift)`.
    pub fn new(precision: DMatrix<f64>, shift: DVector<f64>) -> Result<Self, FunctionalError> {
        if precision.nrows() != precision.ncols()
            || symmetry_defect(&precision) > 1e-10
            || Cholesky::new(precision.clone()).is_none()
        {
            return Err(FunctionalError::NotSpd { what: "precision" });
        }
        if shift.len() != precision.nrows() {
            return Err(FunctionalError::DimMismatch {
                expected: precision.nrows(),
                found: shift.len(),
            });
        }
        Ok(Self { precision, shift })
    }

    /// Isotropic `V(x) = (1/2)||x||^2`, the potential whose mirror scheme is
    /// plain Wasserstein gradient descent.
    pub fn isotropic(d: usize) -> Self {
        Self {
            precision: DMatrix::identity(d, d),
            shift: DVector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.precision.nrows()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn potential_at(&self, x: &DVector<f64>) -> f64 {
        let z = x - &self.shift;
        0.5 * (&self.precision * &z).dot(&z)
    }

    pub fn grad_at(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.precision * (x - &self.shift)
    }
}

impl Functional for QuadraticPotential {
    fn value(&self, cloud: &ParticleCloud) -> Result<f64, FunctionalError> {
        check_dim(self.dim(), cloud)?;
        let n = cloud.len();
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.potential_at(&cloud.particle(i));
        }
        Ok(acc / n as f64)
    }

    fn wgrad(&self, cloud: &ParticleCloud) -> Result<VelocityField, FunctionalError> {
        check_dim(self.dim(), cloud)?;
        let mut values = DMatrix::zeros(cloud.len(), cloud.dim());
        for i in 0..cloud.len() {
            values
                .row_mut(i)
                .copy_from(&self.grad_at(&cloud.particle(i)).transpose());
        }
        Ok(VelocityField::new(values))
    }
}
