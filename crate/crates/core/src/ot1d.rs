//! One-dimensional transport primitives, sphere sampling, and the log-domain
//! Sinkhorn solver.
//!
//! These are the shared kernels behind the sliced and entropic objectives:
//! sorted-quantile pairing for 1D optimal transport, uniform random
//! projection directions, and symmetric log-domain Sinkhorn iterations for
//! entropic optimal transport between uniform empirical measures.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::measures::ParticleCloud;
use crate::rng::rng_from;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("target measure is empty")]
    EmptyTarget,
    #[error("entropic regularization must be positive (got {0})")]
    NonPositiveEpsilon(f64),
    #[error("sinkhorn did not reach tolerance in {iterations} iterations (residual {residual:.3e})")]
    SinkhornMaxIter { iterations: usize, residual: f64 },
}

/// `L` unit directions in `R^d`, one per row, drawn from the given seed.
#[derive(Debug, Clone)]
pub struct Projections {
    directions: DMatrix<f64>,
    seed: u64,
}

impl Projections {
    pub fn count(&self) -> usize {
        self.directions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.directions.ncols()
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    pub fn direction(&self, l: usize) -> DVector<f64> {
        self.directions.row(l).transpose()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Draw `l` directions uniformly on the unit sphere: normalized i.i.d.
/// standard Gaussian vectors. Deterministic per seed.
pub fn sample_sphere(seed: u64, l: usize, d: usize) -> Projections {
    assert!(l >= 1 && d >= 1, "need l >= 1 and d >= 1");
    let mut rng = rng_from(seed);
    let mut directions = DMatrix::zeros(l, d);
    for mut row in directions.row_iter_mut() {
        loop {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let norm = row.norm();
            if norm > 0.0 {
                row /= norm;
                break;
            }
        }
    }
    Projections { directions, seed }
}

/// Sort values ascending, breaking ties by original index, and return the
/// sorted values together with the permutation (`perm[rank] = original
/// index`).
pub fn sorted_with_indices(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..values.len()).collect();
    perm.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted = perm.iter().map(|&i| values[i]).collect();
    (sorted, perm)
}

/// Displacement of the 1D optimal transport pairing between sorted samples.
///
/// For `n = m` this is the rank pairing `src_i - tgt_i`, the displacement of
/// the exact 1D OT map for distinct values. For `n != m` each source rank
/// `i` is matched with the target order statistic at the midpoint quantile
/// level `(i + 1/2)/n`, i.e. the entry at 1-based index `ceil(q * m)` clamped
/// to `[1, m]`.
pub fn quantile_displacement(src: &[f64], tgt: &[f64]) -> Result<Vec<f64>, OtError> {
    if tgt.is_empty() {
        return Err(OtError::EmptyTarget);
    }
    debug_assert!(src.windows(2).all(|w| w[0] <= w[1]), "src not sorted");
    debug_assert!(tgt.windows(2).all(|w| w[0] <= w[1]), "tgt not sorted");
    let n = src.len();
    let m = tgt.len();
    if n == m {
        return Ok(src.iter().zip(tgt).map(|(s, t)| s - t).collect());
    }
    Ok(src
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let q = (i as f64 + 0.5) / n as f64;
            let idx = (q * m as f64).ceil() as usize;
            s - tgt[idx.clamp(1, m) - 1]
        })
        .collect())
}

/// Converged dual potentials of an entropic OT problem, with the final
/// marginal violation.
#[derive(Debug, Clone)]
pub struct DualPotentials {
    pub f: DVector<f64>,
    pub g: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl DualPotentials {
    /// Entropic OT value at convergence, `mean(f) + mean(g)`.
    pub fn ot_value(&self) -> f64 {
        self.f.mean() + self.g.mean()
    }
}

fn cost_matrix(src: &ParticleCloud, tgt: &ParticleCloud) -> DMatrix<f64> {
    let n = src.len();
    let m = tgt.len();
    let mut c = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            c[(i, j)] = (src.positions().row(i) - tgt.positions().row(j)).norm_squared();
        }
    }
    c
}

/// `-eps * log( (1/len) sum_j exp((pot_j - cost_row_j)/eps) )`, max-shifted.
fn softmin_row(cost_row: &[f64], pot: &DVector<f64>, eps: f64) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    for (j, c) in cost_row.iter().enumerate() {
        hi = hi.max((pot[j] - c) / eps);
    }
    // All-(-inf) cannot happen: costs are finite.
    let mut acc = 0.0;
    for (j, c) in cost_row.iter().enumerate() {
        acc += ((pot[j] - c) / eps - hi).exp();
    }
    -eps * (hi + (acc / cost_row.len() as f64).ln())
}

/// `max_i | sum_j gamma_ij - 1/n | * n` for the plan implied by `(f, g)`.
fn row_marginal_violation(c: &DMatrix<f64>, f: &DVector<f64>, g: &DVector<f64>, eps: f64) -> f64 {
    let n = c.nrows();
    let m = c.ncols();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row_sum = 0.0;
            for j in 0..m {
                row_sum += ((f[i] + g[j] - c[(i, j)]) / eps).exp() / m as f64;
            }
            // gamma row sum is row_sum / n; violation scaled by n.
            (row_sum - 1.0).abs()
        })
        .reduce(|| 0.0, f64::max)
}

fn sinkhorn_core(
    c: &DMatrix<f64>,
    eps: f64,
    max_iter: usize,
    tol: f64,
    init: Option<(DVector<f64>, DVector<f64>)>,
    symmetric: bool,
) -> Result<DualPotentials, OtError> {
    if eps <= 0.0 {
        return Err(OtError::NonPositiveEpsilon(eps));
    }
    let n = c.nrows();
    let m = c.ncols();
    let (mut f, mut g) = init.unwrap_or_else(|| (DVector::zeros(n), DVector::zeros(m)));
    let rows: Vec<Vec<f64>> = (0..n).map(|i| c.row(i).iter().copied().collect()).collect();
    let cols: Vec<Vec<f64>> = (0..m).map(|j| c.column(j).iter().copied().collect()).collect();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        if symmetric {
            // Fixed-point averaging keeps f = g throughout.
            let fnew: Vec<f64> = rows
                .par_iter()
                .map(|row| softmin_row(row, &f, eps))
                .collect();
            for i in 0..n {
                f[i] = 0.5 * (f[i] + fnew[i]);
            }
            g.copy_from(&f);
        } else {
            let fnew: Vec<f64> = rows
                .par_iter()
                .map(|row| softmin_row(row, &g, eps))
                .collect();
            f = DVector::from_vec(fnew);
            let gnew: Vec<f64> = cols
                .par_iter()
                .map(|col| softmin_row(col, &f, eps))
                .collect();
            g = DVector::from_vec(gnew);
        }
        residual = row_marginal_violation(c, &f, &g, eps);
        if residual <= tol {
            return Ok(DualPotentials {
                f,
                g,
                residual,
                iterations: it,
            });
        }
    }
    Err(OtError::SinkhornMaxIter {
        iterations: max_iter,
        residual,
    })
}

/// Gradient in `x` of the softmin dual potential
/// `f(x) = -eps log (1/m) sum_j exp((g_j - ||x - y_j||^2)/eps)`
/// evaluated at the particles of `src`, with `g` held fixed (envelope
/// theorem): row `i` equals `2 sum_j p_ij (x_i - y_j)` for the softmax
/// weights `p_i` over the targets.
pub fn dual_potential_grad(
    src: &ParticleCloud,
    tgt: &ParticleCloud,
    g: &DVector<f64>,
    eps: f64,
) -> crate::measures::VelocityField {
    let n = src.len();
    let m = tgt.len();
    let d = src.dim();
    assert_eq!(m, g.len(), "potential length must match target size");
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = src.positions().row(i);
            let mut logits = vec![0.0; m];
            let mut hi = f64::NEG_INFINITY;
            for j in 0..m {
                let c = (xi - tgt.positions().row(j)).norm_squared();
                logits[j] = (g[j] - c) / eps;
                hi = hi.max(logits[j]);
            }
            let mut weight_sum = 0.0;
            let mut barycenter = vec![0.0; d];
            for j in 0..m {
                let w = (logits[j] - hi).exp();
                weight_sum += w;
                for c in 0..d {
                    barycenter[c] += w * tgt.positions()[(j, c)];
                }
            }
            (0..d)
                .map(|c| 2.0 * (xi[c] - barycenter[c] / weight_sum))
                .collect()
        })
        .collect();
    let mut out = DMatrix::zeros(n, d);
    for (i, row) in rows.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            out[(i, c)] = v;
        }
    }
    crate::measures::VelocityField::new(out)
}

/// Solve entropic OT between two uniform empirical measures by alternating
/// log-domain softmin updates; stops when the maximum marginal violation
/// drops below `tol`.
pub fn sinkhorn_solve(
    src: &ParticleCloud,
    tgt: &ParticleCloud,
    eps: f64,
    max_iter: usize,
    tol: f64,
) -> Result<DualPotentials, OtError> {
    sinkhorn_core(&cost_matrix(src, tgt), eps, max_iter, tol, None, false)
}

/// [`sinkhorn_solve`] with initial dual potentials, for warm starts across
/// consecutive solves on slowly moving clouds.
pub fn sinkhorn_solve_warm(
    src: &ParticleCloud,
    tgt: &ParticleCloud,
    eps: f64,
    max_iter: usize,
    tol: f64,
    init: Option<(DVector<f64>, DVector<f64>)>,
) -> Result<DualPotentials, OtError> {
    sinkhorn_core(&cost_matrix(src, tgt), eps, max_iter, tol, init, false)
}

/// Symmetric self-problem `OT_eps(mu, mu)` via the fixed-point averaging
/// update; returns potentials with `f = g`.
pub fn sinkhorn_solve_sym(
    cloud: &ParticleCloud,
    eps: f64,
    max_iter: usize,
    tol: f64,
    init: Option<DVector<f64>>,
) -> Result<DualPotentials, OtError> {
    let c = cost_matrix(cloud, cloud);
    sinkhorn_core(
        &c,
        eps,
        max_iter,
        tol,
        init.map(|f| (f.clone(), f)),
        true,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{sample_gaussian, GaussianState, RngSeed};

    #[test]
    fn sphere_rows_are_unit_and_deterministic() {
        let p = sample_sphere(3, 64, 5);
        for l in 0..64 {
            assert!((p.direction(l).norm() - 1.0).abs() <= 1e-12);
        }
        let q = sample_sphere(3, 64, 5);
        assert_eq!(p.directions(), q.directions());
    }

    #[test]
    fn sphere_in_one_dimension_is_sign() {
        let p = sample_sphere(1, 32, 1);
        for l in 0..32 {
            let v = p.directions()[(l, 0)];
            assert!(v == 1.0 || v == -1.0);
        }
    }

    #[test]
    fn quantile_identical_is_zero() {
        let s = [0.0, 1.5, 2.0];
        let out = quantile_displacement(&s, &s).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quantile_rank_pairing() {
        let out = quantile_displacement(&[0.0, 1.0, 2.0], &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(out, vec![-10.0, -10.0, -10.0]);
    }

    #[test]
    fn quantile_unequal_uses_midpoint_order_statistic() {
        // n=1, m=2: level 1/2 hits the first order statistic.
        let out = quantile_displacement(&[0.0], &[4.0, 6.0]).unwrap();
        assert_eq!(out, vec![-4.0]);
        // n=2, m=4: levels 1/4 and 3/4 hit order statistics 1 and 3.
        let out = quantile_displacement(&[0.0, 0.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(out, vec![-1.0, -3.0]);
    }

    #[test]
    fn quantile_rejects_empty_target() {
        assert!(matches!(
            quantile_displacement(&[0.0], &[]),
            Err(OtError::EmptyTarget)
        ));
    }

    /// Brute-force assignment oracle: for n = m the optimal one-to-one
    /// matching under squared cost.
    fn assignment_oracle(src: &[f64], tgt: &[f64]) -> Vec<f64> {
        fn permutations(k: usize) -> Vec<Vec<usize>> {
            if k == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for p in permutations(k - 1) {
                for slot in 0..k {
                    let mut q: Vec<usize> = p.iter().map(|&v| if v >= slot { v + 1 } else { v }).collect();
                    q.push(slot);
                    out.push(q);
                }
            }
            out
        }
        let n = src.len();
        let best = permutations(n)
            .into_iter()
            .min_by(|a, b| {
                let ca: f64 = (0..n).map(|i| (src[i] - tgt[a[i]]).powi(2)).sum();
                let cb: f64 = (0..n).map(|i| (src[i] - tgt[b[i]]).powi(2)).sum();
                ca.total_cmp(&cb)
            })
            .unwrap();
        (0..n).map(|i| src[i] - tgt[best[i]]).collect()
    }

    #[test]
    fn quantile_matches_assignment_oracle_for_equal_sizes() {
        let mut rng = crate::rng::rng_from(17);
        use rand::Rng;
        for _ in 0..50 {
            let n = rng.random_range(1..=6);
            let mut src: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut tgt: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            src.sort_by(f64::total_cmp);
            tgt.sort_by(f64::total_cmp);
            let ours = quantile_displacement(&src, &tgt).unwrap();
            let oracle = assignment_oracle(&src, &tgt);
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    fn dirac(x: &[f64]) -> ParticleCloud {
        ParticleCloud::from_rows(&[x])
    }

    #[test]
    fn sinkhorn_single_support_value_is_squared_distance() {
        for eps in [0.1, 1.0, 10.0] {
            let out = sinkhorn_solve(&dirac(&[0.0]), &dirac(&[3.0]), eps, 100, 1e-12).unwrap();
            assert!((out.f[0] + out.g[0] - 9.0).abs() <= 1e-9);
            assert!((out.ot_value() - 9.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn sinkhorn_symmetric_self_problem_converges() {
        let cloud = sample_gaussian(RngSeed(5), 12, &GaussianState::standard(2)).unwrap();
        let sym = sinkhorn_solve_sym(&cloud, 0.5, 2000, 1e-10, None).unwrap();
        assert_eq!(sym.f, sym.g);
        // The asymmetric solver on (mu, mu) must agree on the OT value.
        let asym = sinkhorn_solve(&cloud, &cloud, 0.5, 5000, 1e-10).unwrap();
        assert!((sym.ot_value() - asym.ot_value()).abs() <= 1e-6);
    }

    /// Independent linear-domain scaling oracle with primal value
    /// `<C, gamma> + eps * KL(gamma || a x b)`.
    fn dense_sinkhorn_primal(
        src: &ParticleCloud,
        tgt: &ParticleCloud,
        eps: f64,
        sweeps: usize,
    ) -> f64 {
        let c = cost_matrix(src, tgt);
        let (n, m) = c.shape();
        let k = c.map(|v| (-v / eps).exp());
        let a = DVector::from_element(n, 1.0 / n as f64);
        let b = DVector::from_element(m, 1.0 / m as f64);
        let mut u = DVector::from_element(n, 1.0);
        let mut v = DVector::from_element(m, 1.0);
        for _ in 0..sweeps {
            let kv = &k * &v;
            for i in 0..n {
                u[i] = a[i] / kv[i];
            }
            let ktu = k.transpose() * &u;
            for j in 0..m {
                v[j] = b[j] / ktu[j];
            }
        }
        let mut primal = 0.0;
        for i in 0..n {
            for j in 0..m {
                let gamma = u[i] * k[(i, j)] * v[j];
                primal += gamma * c[(i, j)];
                if gamma > 0.0 {
                    primal += eps * gamma * (gamma / (a[i] * b[j])).ln();
                }
            }
        }
        primal
    }

    #[test]
    fn sinkhorn_value_matches_dense_oracle_and_is_monotone_in_eps() {
        let src = sample_gaussian(RngSeed(1), 5, &GaussianState::standard(2)).unwrap();
        let tgt = sample_gaussian(RngSeed(2), 5, &GaussianState::standard(2)).unwrap();
        let mut previous = f64::NEG_INFINITY;
        let mut mean_cost = 0.0;
        let c = cost_matrix(&src, &tgt);
        for v in c.iter() {
            mean_cost += v / 25.0;
        }
        for eps in [0.5, 2.0, 8.0] {
            let duals = sinkhorn_solve(&src, &tgt, eps, 20_000, 1e-12).unwrap();
            let oracle = dense_sinkhorn_primal(&src, &tgt, eps, 20_000);
            assert!(
                (duals.ot_value() - oracle).abs() <= 1e-6,
                "eps={eps}: dual {} vs primal oracle {}",
                duals.ot_value(),
                oracle
            );
            // KL-regularized OT grows with eps, approaching the mean cost
            // of the independent coupling from below.
            assert!(duals.ot_value() > previous);
            assert!(duals.ot_value() <= mean_cost + 1e-9);
            previous = duals.ot_value();
        }
    }

    #[test]
    fn sinkhorn_residual_decreases_across_iterations() {
        let src = sample_gaussian(RngSeed(21), 20, &GaussianState::standard(3)).unwrap();
        let tgt = sample_gaussian(RngSeed(22), 20, &GaussianState::standard(3)).unwrap();
        let c = cost_matrix(&src, &tgt);
        let eps = 0.7;
        let mut f = DVector::zeros(20);
        let mut g = DVector::zeros(20);
        let rows: Vec<Vec<f64>> = (0..20).map(|i| c.row(i).iter().copied().collect()).collect();
        let cols: Vec<Vec<f64>> = (0..20).map(|j| c.column(j).iter().copied().collect()).collect();
        let mut last = f64::INFINITY;
        for _ in 0..60 {
            for i in 0..20 {
                f[i] = softmin_row(&rows[i], &g, eps);
            }
            for j in 0..20 {
                g[j] = softmin_row(&cols[j], &f, eps);
            }
            let r = row_marginal_violation(&c, &f, &g, eps);
            if last < 1e-12 {
                break;
            }
            assert!(
                r <= last + 1e-12,
                "residual increased: {r:.3e} after {last:.3e}"
            );
            last = r;
        }
    }

    #[test]
    fn sinkhorn_reports_residual_on_max_iter() {
        let src = sample_gaussian(RngSeed(31), 10, &GaussianState::standard(2)).unwrap();
        let tgt = sample_gaussian(RngSeed(32), 10, &GaussianState::standard(2)).unwrap();
        match sinkhorn_solve(&src, &tgt, 1e-3, 2, 1e-14) {
            Err(OtError::SinkhornMaxIter {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual.is_finite());
            }
            other => panic!("expected max-iter error, got {other:?}"),
        }
    }

    #[test]
    fn tiny_epsilon_does_not_overflow() {
        // eps at 1e-3 times the squared-distance scale.
        let src = dirac(&[0.0]);
        let tgt = ParticleCloud::from_rows(&[&[10.0], &[20.0]]);
        let out = sinkhorn_solve(&src, &tgt, 0.1, 10_000, 1e-9).unwrap();
        assert!(out.f[0].is_finite() && out.g[0].is_finite() && out.g[1].is_finite());
    }
}
