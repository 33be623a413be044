//! The `wflow check` diagnostics suite: gradient validation over the
//! standard random suite, Bregman axioms, conjugacy, and divergence
//! sanity checks, one pass/fail line each.

use anyhow::Result;
use wflow_core::diagnostics::{grad_check, smoothness_probe};
use wflow_core::functionals::{
    sample_simplex_uniform, InteractionEnergy, InteractionKernel, QuadraticPotential,
    SinkhornDivergence, SlicedEnergyDistance, SlicedWasserstein,
};
use wflow_core::measures::{sample_gaussian, GaussianState, ParticleCloud, RngSeed, VelocityField};
use wflow_core::nalgebra::{DMatrix, DVector};
use wflow_core::rng::{derive_seed, rng_from};
use wflow_core::BregmanPotential;
use rand::Rng;

struct Report {
    failed: usize,
}

impl Report {
    fn new() -> Self {
        Self { failed: 0 }
    }

    fn check(&mut self, name: &str, outcome: Result<(f64, f64), String>) {
        // outcome = Ok((observed, bound)) passes when observed <= bound.
        match outcome {
            Ok((observed, bound)) if observed <= bound => {
                println!("[PASS] {name}: {observed:.3e} <= {bound:.0e}");
            }
            Ok((observed, bound)) => {
                println!("[FAIL] {name}: {observed:.3e} > {bound:.0e}");
                self.failed += 1;
            }
            Err(e) => {
                println!("[FAIL] {name}: {e}");
                self.failed += 1;
            }
        }
    }
}

fn standard_suite(seed: u64) -> Vec<ParticleCloud> {
    // The standard random gradient-check suite: n = 5 particles in
    // d = 1, 2, 3.
    (1..=3)
        .map(|d| {
            sample_gaussian(
                RngSeed(derive_seed(seed, d as u64)),
                5,
                &GaussianState::standard(d),
            )
            .expect("standard suite sample")
        })
        .collect()
}

fn max_grad_err<F: wflow_core::Functional>(
    make: impl Fn(&ParticleCloud) -> Result<F, String>,
    clouds: &[ParticleCloud],
    h: f64,
) -> Result<(f64, f64), String> {
    let mut worst = 0.0f64;
    for cloud in clouds {
        let f = make(cloud)?;
        let err = grad_check(&f, cloud, h).map_err(|e| e.to_string())?;
        worst = worst.max(err);
    }
    Ok((worst, f64::NAN))
}

/// Run the whole suite; returns the number of failed checks.
pub fn run_checks(seed: u64) -> usize {
    let mut report = Report::new();
    let clouds = standard_suite(seed);

    report.check(
        "grad: quadratic potential",
        max_grad_err(
            |c| {
                QuadraticPotential::centered(DMatrix::identity(c.dim(), c.dim()) * 1.5)
                    .map_err(|e| e.to_string())
            },
            &clouds,
            1e-5,
        )
        .map(|(w, _)| (w, 1e-6)),
    );
    for (name, kernel) in [
        ("k2", InteractionKernel::quadratic()),
        ("k4", InteractionKernel::quartic()),
        ("quartic-well", InteractionKernel::quartic_well()),
    ] {
        report.check(
            &format!("grad: interaction {name}"),
            max_grad_err(|_| Ok(InteractionEnergy::new(kernel.clone())), &clouds, 1e-5)
                .map(|(w, _)| (w, 1e-6)),
        );
    }
    report.check(
        "grad: sinkhorn (tight duals)",
        max_grad_err(
            |c| {
                let tgt = sample_gaussian(
                    RngSeed(derive_seed(seed, 100 + c.dim() as u64)),
                    6,
                    &GaussianState::standard(c.dim()),
                )
                .map_err(|e| e.to_string())?;
                SinkhornDivergence::new(tgt, 0.8, 100_000, 1e-9).map_err(|e| e.to_string())
            },
            &clouds,
            1e-5,
        )
        .map(|(w, _)| (w, 1e-6)),
    );
    report.check(
        "grad: sliced wasserstein (frozen seed)",
        max_grad_err(
            |c| {
                let tgt = sample_gaussian(
                    RngSeed(derive_seed(seed, 200 + c.dim() as u64)),
                    5,
                    &GaussianState::standard(c.dim()),
                )
                .map_err(|e| e.to_string())?;
                SlicedWasserstein::new(tgt, 64, derive_seed(seed, 7)).map_err(|e| e.to_string())
            },
            &clouds,
            1e-5,
        )
        .map(|(w, _)| (w, 1e-4)),
    );
    report.check(
        "grad: sliced energy distance (frozen seed)",
        max_grad_err(
            |c| {
                let tgt = sample_gaussian(
                    RngSeed(derive_seed(seed, 300 + c.dim() as u64)),
                    5,
                    &GaussianState::standard(c.dim()),
                )
                .map_err(|e| e.to_string())?;
                SlicedEnergyDistance::new(tgt, 64, derive_seed(seed, 8)).map_err(|e| e.to_string())
            },
            &clouds,
            1e-5,
        )
        .map(|(w, _)| (w, 1e-3)),
    );

    // Bregman axioms: nonnegativity and the three-point identity.
    report.check("bregman: three-point identity", {
        let cloud = &clouds[2];
        let mut rng = rng_from(derive_seed(seed, 9));
        let mut m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        m = &m * m.transpose() + DMatrix::identity(3, 3);
        match BregmanPotential::quadratic(m) {
            Err(e) => Err(e.to_string()),
            Ok(phi) => {
                let mut worst = 0.0f64;
                let mut negative = false;
                let mut field = || {
                    VelocityField::new(DMatrix::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0)))
                };
                for _ in 0..200 {
                    let (s, t, u) = (field(), field(), field());
                    let lhs = phi.divergence(cloud, &s, &u).unwrap()
                        - phi.divergence(cloud, &s, &t).unwrap()
                        - phi.divergence(cloud, &t, &u).unwrap();
                    let gt = phi.grad_at_field(cloud, &t).unwrap();
                    let gu = phi.grad_at_field(cloud, &u).unwrap();
                    let rhs = VelocityField::new(gt.values() - gu.values())
                        .l2_inner(&VelocityField::new(s.values() - t.values()));
                    worst = worst.max((lhs - rhs).abs());
                    negative |= phi.divergence(cloud, &s, &t).unwrap() < -1e-12;
                }
                if negative {
                    Err("negative Bregman divergence".to_string())
                } else {
                    Ok((worst, 1e-10))
                }
            }
        }
    });

    // Conjugacy of the explicit mirror maps.
    report.check("bregman: simplex conjugacy", {
        let phi = BregmanPotential::simplex_entropy();
        let cloud = sample_simplex_uniform(derive_seed(seed, 10), 30, 2);
        let fwd = phi.forward(&cloud).unwrap();
        let back = phi.inverse_pointwise(&fwd).unwrap();
        Ok((
            (back.values() - cloud.positions()).amax(),
            1e-10,
        ))
    });

    // Smoothness self-probe: every potential paired with its own energy has
    // ratio one.
    report.check("probe: self-pairing ratio", {
        let cloud = &clouds[1];
        let map = VelocityField::new(cloud.positions().map(|v| 0.5 * v + 0.1));
        let f = InteractionEnergy::new(InteractionKernel::quartic());
        let phi = BregmanPotential::interaction(InteractionKernel::quartic());
        match smoothness_probe(&f, &phi, cloud, &map, 11) {
            Ok((sup, inf)) => Ok(((sup - 1.0).abs().max((inf - 1.0).abs()), 1e-9)),
            Err(e) => Err(e.to_string()),
        }
    });

    // Sinkhorn divergence axioms on a random pair.
    report.check("sinkhorn: divergence axioms", {
        let a = sample_gaussian(RngSeed(derive_seed(seed, 11)), 8, &GaussianState::standard(2))
            .unwrap();
        let b = sample_gaussian(RngSeed(derive_seed(seed, 12)), 8, &GaussianState::standard(2))
            .unwrap();
        let fab = SinkhornDivergence::new(b.clone(), 0.7, 50_000, 1e-10).unwrap();
        let fba = SinkhornDivergence::new(a.clone(), 0.7, 50_000, 1e-10).unwrap();
        let faa = SinkhornDivergence::new(a.clone(), 0.7, 50_000, 1e-10).unwrap();
        match (
            wflow_core::Functional::value(&fab, &a),
            wflow_core::Functional::value(&fba, &b),
            wflow_core::Functional::value(&faa, &a),
        ) {
            (Ok(vab), Ok(vba), Ok(vaa)) => {
                let worst = (vab - vba).abs().max(vaa.abs()).max((-vab).max(0.0));
                Ok((worst, 1e-8))
            }
            _ => Err("sinkhorn evaluation failed".to_string()),
        }
    });

    // Gaussian flow fixed points.
    report.check("bures: stationary fixed points", {
        let u = wflow_core::linalg::random_orthogonal(derive_seed(seed, 13), 3);
        let mut rng = rng_from(derive_seed(seed, 14));
        let mut diag =
            || DMatrix::from_diagonal(&DVector::from_fn(3, |_, _| rng.random_range(0.3..4.0)));
        let sigma = wflow_core::linalg::symmetrize(&(&u * diag() * u.transpose()));
        let lambda = wflow_core::linalg::symmetrize(&(&u * diag() * u.transpose()));
        let target = GaussianState::new(DVector::zeros(3), sigma.clone()).unwrap();
        let nem = wflow_core::bures::nem_step(&sigma, &sigma, 0.1).unwrap();
        let cfg = wflow_core::GaussianFlowConfig::new(
            target.clone(),
            wflow_core::GaussianScheme::Fb,
            0.05,
        )
        .with_lambda(lambda);
        let fb = wflow_core::bures::fb_step(&target, &cfg).unwrap();
        let worst = ((&nem - &sigma).norm() / sigma.norm())
            .max((fb.cov() - &sigma).norm() / sigma.norm());
        Ok((worst, 1e-8))
    });

    if report.failed == 0 {
        println!("all checks passed");
    } else {
        println!("{} check(s) failed", report.failed);
    }
    report.failed
}
