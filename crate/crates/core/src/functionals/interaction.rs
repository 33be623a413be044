//! Interaction energies `F(mu) = (1/2) iint W(x - y) dmu(x) dmu(y)` with
//! even, twice differentiable kernels.
//!
//! Shipped kernel shapes, with `u = ||z||_A^2 = z^T A z` for an SPD metric
//! `A` (identity when isotropic):
//!
//! - quadratic:     `W = u/2`
//! - quartic:       `W = u^2/4 + u/2`   (attractive confinement)
//! - quartic well:  `W = u^2/4 - u/2`   (short-range repulsion, ring/ellipsoid
//!   stationary states)

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{check_dim, Functional, FunctionalError};
use crate::linalg::symmetry_defect;
use crate::measures::{ParticleCloud, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelShape {
    Quadratic,
    Quartic,
    QuarticWell,
}

/// Even interaction kernel `W(z)`, optionally anisotropic through an SPD
/// metric.
#[derive(Debug, Clone)]
pub struct InteractionKernel {
    shape: KernelShape,
    metric: Option<DMatrix<f64>>,
}

impl InteractionKernel {
    pub fn quadratic() -> Self {
        Self {
            shape: KernelShape::Quadratic,
            metric: None,
        }
    }

    pub fn quartic() -> Self {
        Self {
            shape: KernelShape::Quartic,
            metric: None,
        }
    }

    pub fn quartic_well() -> Self {
        Self {
            shape: KernelShape::QuarticWell,
            metric: None,
        }
    }

    /// Replace `||z||^2` by `z^T metric z` in the kernel shape.
    pub fn with_metric(shape: KernelShape, metric: DMatrix<f64>) -> Result<Self, FunctionalError> {
        if metric.nrows() != metric.ncols()
            || symmetry_defect(&metric) > 1e-10
            || Cholesky::new(metric.clone()).is_none()
        {
            return Err(FunctionalError::NotSpd { what: "metric" });
        }
        Ok(Self {
            shape,
            metric: Some(metric),
        })
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn metric(&self) -> Option<&DMatrix<f64>> {
        self.metric.as_ref()
    }

    /// Metric dimension when anisotropic; any dimension fits the isotropic
    /// kernels.
    pub fn dim(&self) -> Option<usize> {
        self.metric.as_ref().map(|m| m.nrows())
    }

    fn az(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.metric {
            Some(a) => a * z,
            None => z.clone(),
        }
    }

    pub fn w(&self, z: &DVector<f64>) -> f64 {
        let u = self.az(z).dot(z);
        match self.shape {
            KernelShape::Quadratic => 0.5 * u,
            KernelShape::Quartic => 0.25 * u * u + 0.5 * u,
            KernelShape::QuarticWell => 0.25 * u * u - 0.5 * u,
        }
    }

    pub fn grad_w(&self, z: &DVector<f64>) -> DVector<f64> {
        let az = self.az(z);
        let u = az.dot(z);
        match self.shape {
            KernelShape::Quadratic => az,
            KernelShape::Quartic => az * (u + 1.0),
            KernelShape::QuarticWell => az * (u - 1.0),
        }
    }

    pub fn hess_w(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let d = z.len();
        let a = match &self.metric {
            Some(a) => a.clone(),
            None => DMatrix::identity(d, d),
        };
        let az = self.az(z);
        let u = az.dot(z);
        match self.shape {
            KernelShape::Quadratic => a,
            KernelShape::Quartic => 2.0 * &az * az.transpose() + a * (u + 1.0),
            KernelShape::QuarticWell => 2.0 * &az * az.transpose() + a * (u - 1.0),
        }
    }

    fn check_cloud(&self, cloud: &ParticleCloud) -> Result<(), FunctionalError> {
        if let Some(d) = self.dim() {
            check_dim(d, cloud)?;
        }
        Ok(())
    }
}

/// `F(mu) = (1/(2 n^2)) sum_{i,j} W(x_i - x_j)`, all ordered pairs including
/// `i = j` (every shipped kernel has `W(0) = 0` and `grad W(0) = 0`, so the
/// diagonal terms are inert and the inner loop is branch-free).
#[derive(Debug, Clone)]
pub struct InteractionEnergy {
    kernel: InteractionKernel,
}

impl InteractionEnergy {
    pub fn new(kernel: InteractionKernel) -> Self {
        Self { kernel }
    }

    pub fn kernel(&self) -> &InteractionKernel {
        &self.kernel
    }
}

impl Functional for InteractionEnergy {
    fn value(&self, cloud: &ParticleCloud) -> Result<f64, FunctionalError> {
        self.kernel.check_cloud(cloud)?;
        let n = cloud.len();
        let mut acc = 0.0;
        for i in 0..n {
            let xi = cloud.particle(i);
            for j in 0..n {
                acc += self.kernel.w(&(&xi - cloud.particle(j)));
            }
        }
        Ok(acc / (2.0 * (n * n) as f64))
    }

    fn wgrad(&self, cloud: &ParticleCloud) -> Result<VelocityField, FunctionalError> {
        self.kernel.check_cloud(cloud)?;
        let n = cloud.len();
        let mut values = DMatrix::zeros(n, cloud.dim());
        for i in 0..n {
            let xi = cloud.particle(i);
            let mut g = DVector::zeros(cloud.dim());
            for j in 0..n {
                g += self.kernel.grad_w(&(&xi - cloud.particle(j)));
            }
            values.row_mut(i).copy_from(&(g / n as f64).transpose());
        }
        Ok(VelocityField::new(values))
    }
}
