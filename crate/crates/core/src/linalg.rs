//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::rng::rng_from;
use rand_distr::{Distribution, StandardNormal};

/// Relative symmetry defect `||M - M^T||_F / max(||M||_F, eps)`.
pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let denom = m.norm().max(f64::MIN_POSITIVE);
    (m - m.transpose()).norm() / denom
}

/// `(M + M^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
///
/// Returns `(u, lambda)` with `m = u * diag(lambda) * u^T` and the columns of
/// `u` orthonormal.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let d = m.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut u = DMatrix::zeros(d, d);
    let mut lambda = DVector::zeros(d);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &eig.eigenvectors.column(src));
        lambda[dst] = eig.eigenvalues[src];
    }
    (u, lambda)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let (_, lambda) = sym_eigen(m);
    lambda[0]
}

/// Relative commutator norm `||AB - BA||_F / (||A||_F ||B||_F)`.
pub fn commutator_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = (a.norm() * b.norm()).max(f64::MIN_POSITIVE);
    (a * b - b * a).norm() / denom
}

/// Simultaneously diagonalize a family of pairwise-commuting symmetric
/// matrices.
///
/// Returns an orthogonal `u` and, per input matrix, the diagonal of
/// `u^T m u`, provided every conjugation is diagonal up to a relative
/// off-diagonal mass of `tol`. Returns `None` when the family does not
/// commute to that accuracy.
///
/// The basis is found by eigendecomposing a generic linear combination of
/// the inputs. Several fixed coefficient sets are tried and the basis with
/// the smallest relative off-diagonal mass wins: an accidental eigenvalue
/// collision in one combination produces a dirty basis there, but moves
/// away under different weights.
pub fn shared_eigenbasis(
    mats: &[&DMatrix<f64>],
    tol: f64,
) -> Option<(DMatrix<f64>, Vec<DVector<f64>>)> {
    assert!(!mats.is_empty());
    let d = mats[0].nrows();
    // Irrational-looking weights keep the combination's spectrum simple for
    // generic commuting families.
    const WEIGHTS: [[f64; 3]; 4] = [
        [1.0, 0.618_033_988_749_894_9, 0.381_966_011_250_105_2],
        [0.5, 1.414_213_562_373_095_1, 0.707_106_781_186_547_6],
        [2.0, 0.739_085_133_215_160_7, 1.303_577_269_034_296_4],
        [0.318_309_886_183_790_7, 1.0, 2.718_281_828_459_045],
    ];
    let mut best: Option<(f64, DMatrix<f64>, Vec<DVector<f64>>)> = None;
    for weights in WEIGHTS {
        let mut combo = DMatrix::zeros(d, d);
        for (k, m) in mats.iter().enumerate() {
            let w = weights[k % weights.len()] * (k / weights.len() + 1) as f64;
            combo += m.scale(w / m.norm().max(f64::MIN_POSITIVE));
        }
        let (u, _) = sym_eigen(&combo);
        let mut worst_rel = 0.0f64;
        let mut diags = Vec::with_capacity(mats.len());
        for m in mats {
            let conj = u.transpose() * *m * &u;
            let mut off = 0.0;
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        off += conj[(i, j)] * conj[(i, j)];
                    }
                }
            }
            worst_rel = worst_rel.max(off.sqrt() / conj.norm().max(f64::MIN_POSITIVE));
            diags.push(DVector::from_fn(d, |i, _| conj[(i, i)]));
        }
        if best.as_ref().map(|(r, _, _)| worst_rel < *r).unwrap_or(true) {
            best = Some((worst_rel, u, diags));
        }
    }
    match best {
        Some((rel, u, diags)) if rel <= tol => Some((u, diags)),
        _ => None,
    }
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the sign convention fixed by the diagonal of R).
pub fn random_orthogonal(seed: u64, d: usize) -> DMatrix<f64> {
    let mut rng = rng_from(seed);
    let g: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let q = random_orthogonal(3, 6);
        let should_be_eye = &q * q.transpose();
        assert!((should_be_eye - DMatrix::<f64>::identity(6, 6)).norm() < 1e-12);
    }

    #[test]
    fn random_orthogonal_is_deterministic() {
        assert_eq!(random_orthogonal(11, 4), random_orthogonal(11, 4));
    }

    #[test]
    fn shared_basis_diagonalizes_commuting_family() {
        let u = random_orthogonal(5, 4);
        let a = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])) * u.transpose();
        let b = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.1, 2.0, 7.0])) * u.transpose();
        let (v, diags) = shared_eigenbasis(&[&a, &b], 1e-8).expect("commuting family");
        let ra = &v * DMatrix::from_diagonal(&diags[0]) * v.transpose();
        let rb = &v * DMatrix::from_diagonal(&diags[1]) * v.transpose();
        assert!((ra - a).norm() < 1e-9);
        assert!((rb - b).norm() < 1e-9);
    }

    #[test]
    fn shared_basis_rejects_non_commuting() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert!(shared_eigenbasis(&[&a, &b], 1e-8).is_none());
    }

    #[test]
    fn shared_basis_handles_degenerate_spectrum() {
        // Identity commutes with everything; its eigenbasis alone would be
        // useless, the combination must pick up the structure of b.
        let eye = DMatrix::<f64>::identity(3, 3);
        let u = random_orthogonal(9, 3);
        let b = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 9.0])) * u.transpose();
        let (v, diags) = shared_eigenbasis(&[&eye, &b], 1e-8).expect("commuting");
        let rb = &v * DMatrix::from_diagonal(&diags[1]) * v.transpose();
        assert!((rb - b).norm() < 1e-9);
    }
}
