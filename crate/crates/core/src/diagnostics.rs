//! Numerical verification harness: finite-difference gradient checks,
//! relative-smoothness probes along interpolation curves, and
//! nearest-neighbor KL estimates for reporting.

use nalgebra::DVector;
use thiserror::Error;

use crate::bregman::{BregmanError, BregmanPotential};
use crate::functionals::{
    kozachenko_leonenko_entropy, Functional, FunctionalError, SimplexKl,
};
use crate::measures::{GaussianState, ParticleCloud, VelocityField};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("all sampled curve pairs were degenerate (Bregman divergence below 1e-12)")]
    AllPairsDegenerate,
    #[error("finite-difference step must be positive (got {0})")]
    BadStep(f64),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Bregman(#[from] BregmanError),
}

/// Central finite-difference check of a functional's Wasserstein gradient.
///
/// Perturbs every particle coordinate by `+-h`, compares `n` times the
/// central difference of the value against the gradient entry (the gradient
/// is reported per unit of particle mass `1/n`), and returns the largest
/// relative error `|n fd - g| / max(1, |g|)`.
///
/// Monte-Carlo functionals must be evaluated in frozen-seed mode, i.e. not
/// have their stream advanced between the calls this routine makes.
pub fn grad_check(
    f: &dyn Functional,
    cloud: &ParticleCloud,
    h: f64,
) -> Result<f64, DiagnosticsError> {
    if h <= 0.0 {
        return Err(DiagnosticsError::BadStep(h));
    }
    let n = cloud.len();
    let grad = f.wgrad(cloud)?;
    let mut worst = 0.0f64;
    for i in 0..n {
        for c in 0..cloud.dim() {
            let mut plus = cloud.positions().clone();
            let mut minus = cloud.positions().clone();
            plus[(i, c)] += h;
            minus[(i, c)] -= h;
            let vp = f.value(&ParticleCloud::new(plus).expect("finite perturbation"))?;
            let vm = f.value(&ParticleCloud::new(minus).expect("finite perturbation"))?;
            let fd = (vp - vm) / (2.0 * h) * n as f64;
            let g = grad.values()[(i, c)];
            worst = worst.max((fd - g).abs() / g.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Extreme ratios of the functional's Bregman divergence to the potential's
/// along the interpolation curve `T_r = (1 - r) Id + r T`.
///
/// Pairs `(s, t)` range over a `grid_points`-point grid of `[0, 1]^2` above
/// the diagonal; pairs whose potential divergence is below 1e-12 are
/// skipped. Returns `(sup, inf)` of
/// `d_F(T_s, T_t) / d_phi(T_s, T_t)`, the numerator evaluated through the
/// functional's value and gradient:
/// `d_F(A, B) = F(A # mu) - F(B # mu) - <wgrad(B # mu) o B, A - B>`.
pub fn smoothness_probe(
    f: &dyn Functional,
    phi: &BregmanPotential,
    cloud: &ParticleCloud,
    map: &VelocityField,
    grid_points: usize,
) -> Result<(f64, f64), DiagnosticsError> {
    assert!(grid_points >= 2, "need at least the endpoints");
    let id = VelocityField::identity_on(cloud);
    let at = |r: f64| -> VelocityField {
        VelocityField::new(id.values() * (1.0 - r) + map.values() * r)
    };
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    let mut seen = false;
    for a in 0..grid_points {
        for b in (a + 1)..grid_points {
            let s = a as f64 / (grid_points - 1) as f64;
            let t = b as f64 / (grid_points - 1) as f64;
            let ts = at(s);
            let tt = at(t);
            let denom = phi.divergence(cloud, &ts, &tt)?;
            if denom.abs() < 1e-12 {
                continue;
            }
            let pushed_s = cloud.pushforward(&ts).map_err(FunctionalError::from)?;
            let pushed_t = cloud.pushforward(&tt).map_err(FunctionalError::from)?;
            let grad_t = f.wgrad(&pushed_t)?;
            let diff = VelocityField::new(ts.values() - tt.values());
            let numer =
                f.value(&pushed_s)? - f.value(&pushed_t)? - grad_t.l2_inner(&diff);
            let ratio = numer / denom;
            sup = sup.max(ratio);
            inf = inf.min(ratio);
            seen = true;
        }
    }
    if !seen {
        return Err(DiagnosticsError::AllPairsDegenerate);
    }
    Ok((sup, inf))
}

/// Reference densities for [`entropy_kl_estimate`], known up to their
/// normalizing constant.
#[derive(Debug, Clone)]
pub enum ReferenceDensity {
    Gaussian(GaussianState),
    /// `nu propto exp(-V)` on the open simplex with
    /// `V(x) = -sum_c a_c log x_c - a_{d+1} log(1 - sum x_c)`.
    Dirichlet { concentration: Vec<f64> },
}

impl ReferenceDensity {
    fn neg_log_density(&self, x: &DVector<f64>) -> Result<f64, FunctionalError> {
        match self {
            Self::Gaussian(state) => {
                let chol = nalgebra::Cholesky::new(state.cov().clone()).ok_or(
                    FunctionalError::NotSpd {
                        what: "reference covariance",
                    },
                )?;
                let z = x - state.mean();
                Ok(0.5 * chol.solve(&z).dot(&z))
            }
            Self::Dirichlet { concentration } => {
                let f = SimplexKl::new(concentration.clone())?;
                if x.iter().any(|&v| v <= 0.0) || x.sum() >= 1.0 {
                    return Err(FunctionalError::OutsideSimplex { index: 0 });
                }
                Ok(f.potential_at(x))
            }
        }
    }
}

/// KL estimate of the cloud against a reference density, up to the
/// reference's normalizing constant:
/// `(1/n) sum_i V(x_i) - h_hat(mu)` with `V = -log` unnormalized density
/// and `h_hat` the Kozachenko-Leonenko entropy estimate.
///
/// Intended as a relative convergence trace; absolute values carry the
/// constant offset `-log Z`.
pub fn entropy_kl_estimate(
    cloud: &ParticleCloud,
    reference: &ReferenceDensity,
) -> Result<f64, DiagnosticsError> {
    let n = cloud.len();
    let mut pot = 0.0;
    for i in 0..n {
        pot += reference.neg_log_density(&cloud.particle(i))?;
    }
    Ok(pot / n as f64 - kozachenko_leonenko_entropy(cloud)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{
        InteractionEnergy, InteractionKernel, QuadraticPotential, SlicedWasserstein,
    };
    use crate::measures::{sample_gaussian, RngSeed};
    use nalgebra::DMatrix;

    fn cloud(seed: u64, n: usize, d: usize) -> ParticleCloud {
        sample_gaussian(RngSeed(seed), n, &GaussianState::standard(d)).unwrap()
    }

    #[test]
    fn quadratic_gradient_is_exact_up_to_roundoff() {
        let f = QuadraticPotential::isotropic(2);
        let err = grad_check(&f, &cloud(1, 5, 2), 1e-5).unwrap();
        assert!(err <= 1e-9, "error {err}");
    }

    #[test]
    fn quartic_well_gradient_passes_fd_check() {
        let f = InteractionEnergy::new(InteractionKernel::quartic_well());
        let err = grad_check(&f, &cloud(2, 10, 2), 1e-5).unwrap();
        assert!(err <= 1e-6, "error {err}");
    }

    #[test]
    fn frozen_sw_gradient_passes_fd_check() {
        let target = cloud(3, 6, 2);
        let f = SlicedWasserstein::new(target, 32, 11).unwrap();
        let err = grad_check(&f, &cloud(4, 6, 2), 1e-5).unwrap();
        assert!(err <= 1e-4, "error {err}");
    }

    #[test]
    fn probe_of_functional_against_itself_is_one() {
        let c = cloud(5, 6, 2);
        let map = VelocityField::new(c.positions().map(|v| 0.5 * v + 0.2));
        // Quadratic potential against its own energy.
        let precision = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.5]));
        let f = QuadraticPotential::centered(precision.clone()).unwrap();
        let phi = BregmanPotential::quadratic(precision).unwrap();
        let (sup, inf) = smoothness_probe(&f, &phi, &c, &map, 11).unwrap();
        assert!((sup - 1.0).abs() <= 1e-9 && (inf - 1.0).abs() <= 1e-9);
        // Interaction energy against its own kernel potential.
        let f = InteractionEnergy::new(InteractionKernel::quartic());
        let phi = BregmanPotential::interaction(InteractionKernel::quartic());
        let (sup, inf) = smoothness_probe(&f, &phi, &c, &map, 11).unwrap();
        assert!((sup - 1.0).abs() <= 1e-9 && (inf - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn probe_scales_linearly_in_the_functional() {
        #[derive(Clone)]
        struct Doubled(QuadraticPotential);
        impl Functional for Doubled {
            fn value(&self, c: &ParticleCloud) -> Result<f64, FunctionalError> {
                Ok(2.0 * self.0.value(c)?)
            }
            fn wgrad(&self, c: &ParticleCloud) -> Result<VelocityField, FunctionalError> {
                let g = self.0.wgrad(c)?;
                Ok(VelocityField::new(g.values() * 2.0))
            }
        }
        let c = cloud(6, 5, 2);
        let map = VelocityField::new(c.positions().map(|v| -0.3 * v + 0.1));
        let f = Doubled(QuadraticPotential::isotropic(2));
        let phi = BregmanPotential::isotropic_quadratic(2);
        let (sup, inf) = smoothness_probe(&f, &phi, &c, &map, 11).unwrap();
        assert!((sup - 2.0).abs() <= 1e-9 && (inf - 2.0).abs() <= 1e-9);
    }

    #[test]
    fn quartic_well_is_smooth_relative_to_quartic() {
        // Compactly supported clouds: scale into the unit ball.
        for seed in 0..5u64 {
            let raw = cloud(40 + seed, 8, 2);
            let scale = 1.0 / raw.positions().row_iter().map(|r| r.norm()).fold(1.0, f64::max);
            let c = ParticleCloud::new(raw.positions() * scale).unwrap();
            let map = VelocityField::new(c.positions().map(|v| 0.4 * v - 0.05));
            let f = InteractionEnergy::new(InteractionKernel::quartic_well());
            let phi = BregmanPotential::interaction(InteractionKernel::quartic());
            let (sup, _) = smoothness_probe(&f, &phi, &c, &map, 11).unwrap();
            assert!(sup <= 4.0 + 1e-6, "sup ratio {sup}");
        }
    }

    #[test]
    fn probe_rejects_degenerate_curves() {
        let c = cloud(7, 4, 2);
        let map = VelocityField::identity_on(&c);
        let f = QuadraticPotential::isotropic(2);
        let phi = BregmanPotential::isotropic_quadratic(2);
        assert!(matches!(
            smoothness_probe(&f, &phi, &c, &map, 11),
            Err(DiagnosticsError::AllPairsDegenerate)
        ));
    }

    #[test]
    fn kl_estimate_of_reference_samples_is_the_log_partition() {
        // For mu = ref = N(0, I_d) the estimate converges to
        // -log Z = -(d/2) log(2 pi).
        let reference = ReferenceDensity::Gaussian(GaussianState::standard(2));
        let c = cloud(8, 4000, 2);
        let est = entropy_kl_estimate(&c, &reference).unwrap();
        let expect = -(2.0 / 2.0) * (2.0 * std::f64::consts::PI).ln();
        assert!((est - expect).abs() <= 0.1, "estimate {est} vs {expect}");
    }

    #[test]
    fn kl_estimate_variance_shrinks_with_n() {
        let reference = ReferenceDensity::Gaussian(GaussianState::standard(2));
        let spread = |n: usize| {
            let vals: Vec<f64> = (0..6)
                .map(|s| entropy_kl_estimate(&cloud(100 + s, n, 2), &reference).unwrap())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
        };
        assert!(spread(2000) < spread(100));
    }

    #[test]
    fn kl_estimate_is_translation_invariant_with_the_reference() {
        let c = cloud(9, 64, 2);
        let reference = ReferenceDensity::Gaussian(GaussianState::standard(2));
        let base = entropy_kl_estimate(&c, &reference).unwrap();
        let shift = nalgebra::DVector::from_vec(vec![3.0, -7.0]);
        let mut moved = c.positions().clone();
        for mut row in moved.row_iter_mut() {
            row += shift.transpose();
        }
        let moved = ParticleCloud::new(moved).unwrap();
        let moved_ref = ReferenceDensity::Gaussian(
            GaussianState::new(shift, DMatrix::identity(2, 2)).unwrap(),
        );
        let shifted = entropy_kl_estimate(&moved, &moved_ref).unwrap();
        assert!((base - shifted).abs() <= 1e-9);
    }

    #[test]
    fn kl_estimate_rejects_duplicates() {
        let c = ParticleCloud::from_rows(&[&[0.1, 0.1], &[0.1, 0.1], &[0.2, 0.3]]);
        let reference = ReferenceDensity::Gaussian(GaussianState::standard(2));
        assert!(matches!(
            entropy_kl_estimate(&c, &reference),
            Err(DiagnosticsError::Functional(
                FunctionalError::DuplicateParticles { .. }
            ))
        ));
    }
}
