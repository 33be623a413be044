//! State representations for empirical and Gaussian measures.
//!
//! A [`ParticleCloud`] is the empirical measure `(1/n) sum_i delta_{x_i}`:
//! `n` uniformly weighted particles stored as the rows of an `n x d` matrix.
//! Schemes never reweight particles, they only move them, so a transport map
//! evaluated at the particles is again an `n x d` matrix, a
//! [`VelocityField`]. Gaussian closed-form flows operate on a
//! [`GaussianState`] `(mean, covariance)` instead.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::symmetry_defect;
use crate::rng::rng_from;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("particle cloud must have n >= 1 and d >= 1 (got {n} x {d})")]
    EmptyCloud { n: usize, d: usize },
    #[error("non-finite entry at particle {row}, coordinate {col}")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: cloud is {cloud_n} x {cloud_d}, map values are {map_n} x {map_d}")]
    ShapeMismatch {
        cloud_n: usize,
        cloud_d: usize,
        map_n: usize,
        map_d: usize,
    },
    #[error("covariance is not symmetric positive definite ({reason})")]
    NotSpd { reason: String },
    #[error("mean has dimension {mean_d} but covariance is {cov_d} x {cov_d}")]
    DimMismatch { mean_d: usize, cov_d: usize },
    #[error("cannot sample an empty cloud (n = 0)")]
    ZeroSamples,
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Seed for every sampling operation; identical seed and parameters yield
/// bit-identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeed(pub u64);

/// Empirical measure: `n` particles in `R^d` with uniform weights `1/n`.
///
/// Rows index particles. All entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    positions: DMatrix<f64>,
}

impl ParticleCloud {
    pub fn new(positions: DMatrix<f64>) -> Result<Self, MeasureError> {
        if positions.nrows() == 0 || positions.ncols() == 0 {
            return Err(MeasureError::EmptyCloud {
                n: positions.nrows(),
                d: positions.ncols(),
            });
        }
        for i in 0..positions.nrows() {
            for j in 0..positions.ncols() {
                if !positions[(i, j)].is_finite() {
                    return Err(MeasureError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self { positions })
    }

    /// Build from one slice per particle. Panics on ragged or empty input;
    /// intended for literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty(), "no particles");
        let d = rows[0].len();
        let m = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(m).expect("invalid literal cloud")
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn positions(&self) -> &DMatrix<f64> {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> DVector<f64> {
        self.positions.row(i).transpose()
    }

    /// Mean of the particles.
    pub fn mean(&self) -> DVector<f64> {
        let n = self.len() as f64;
        self.positions.row_sum().transpose() / n
    }

    /// Shift the particles so the mean is the zero vector (within 1e-12).
    ///
    /// A cloud whose mean is already exactly zero is returned unchanged.
    /// Otherwise subtraction passes repeat until the residual mean reaches
    /// rounding level, so re-centering moves nothing by more than one ulp.
    pub fn centered(&self) -> ParticleCloud {
        let n = self.positions.nrows() as f64;
        let scale = self.positions.amax().max(1.0);
        let mut positions = self.positions.clone();
        for _ in 0..8 {
            let mean = positions.row_sum() / n;
            if mean.iter().all(|&v| v == 0.0) {
                break;
            }
            for mut row in positions.row_iter_mut() {
                row -= &mean;
            }
            let residual = (positions.row_sum() / n).norm();
            if residual <= f64::EPSILON * scale {
                break;
            }
        }
        ParticleCloud { positions }
    }

    /// Pushforward of the empirical measure: replace particle `i` by the
    /// map's value at particle `i`.
    pub fn pushforward(&self, map: &VelocityField) -> Result<ParticleCloud, MeasureError> {
        if map.values.shape() != self.positions.shape() {
            return Err(MeasureError::ShapeMismatch {
                cloud_n: self.len(),
                cloud_d: self.dim(),
                map_n: map.values.nrows(),
                map_d: map.values.ncols(),
            });
        }
        ParticleCloud::new(map.values.clone())
    }
}

/// An `L^2(mu)` map evaluated at the particles of a cloud: row `i` is the
/// map's value at particle `i`. Gradients, transport maps and mirror images
/// all take this form.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    values: DMatrix<f64>,
}

impl VelocityField {
    pub fn new(values: DMatrix<f64>) -> Self {
        Self { values }
    }

    /// The identity map evaluated at the particles, i.e. the positions.
    pub fn identity_on(cloud: &ParticleCloud) -> Self {
        Self {
            values: cloud.positions().clone(),
        }
    }

    pub fn zeros_like(cloud: &ParticleCloud) -> Self {
        Self {
            values: DMatrix::zeros(cloud.len(), cloud.dim()),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// `(1/n) sum_i <a_i, b_i>`, the inner product of `L^2(mu_hat)`.
    pub fn l2_inner(&self, other: &VelocityField) -> f64 {
        assert_eq!(self.values.shape(), other.values.shape());
        self.values.dot(&other.values) / self.values.nrows() as f64
    }

    /// `sqrt((1/n) sum_i ||a_i||^2)`.
    pub fn l2_norm(&self) -> f64 {
        self.l2_inner(self).sqrt()
    }

    /// Largest particle-wise Euclidean norm, `max_i ||a_i||_2`.
    pub fn max_row_norm(&self) -> f64 {
        (0..self.values.nrows())
            .map(|i| self.values.row(i).norm())
            .fold(0.0, f64::max)
    }
}

/// Gaussian measure `N(mean, cov)` with symmetric positive definite
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, MeasureError> {
        if cov.nrows() != cov.ncols() || mean.len() != cov.nrows() {
            return Err(MeasureError::DimMismatch {
                mean_d: mean.len(),
                cov_d: cov.nrows(),
            });
        }
        let defect = symmetry_defect(&cov);
        if defect > 1e-10 {
            return Err(MeasureError::NotSpd {
                reason: format!("relative symmetry defect {defect:.3e}"),
            });
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(MeasureError::NotSpd {
                reason: "Cholesky factorization failed".to_string(),
            });
        }
        Ok(Self { mean, cov })
    }

    /// Standard normal in `d` dimensions.
    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

/// Draw `n` i.i.d. samples from the Gaussian through the Cholesky factor of
/// its covariance. Pure function of `(seed, n, state)`.
pub fn sample_gaussian(
    seed: RngSeed,
    n: usize,
    state: &GaussianState,
) -> Result<ParticleCloud, MeasureError> {
    if n == 0 {
        return Err(MeasureError::ZeroSamples);
    }
    let chol = Cholesky::new(state.cov().clone()).ok_or_else(|| MeasureError::NotSpd {
        reason: "Cholesky factorization failed".to_string(),
    })?;
    let l = chol.l();
    let d = state.dim();
    let mut rng = rng_from(seed.0);
    let mut positions = DMatrix::zeros(n, d);
    for i in 0..n {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let x = state.mean() + &l * z;
        positions.row_mut(i).copy_from(&x.transpose());
    }
    ParticleCloud::new(positions)
}

/// Write a cloud as CSV: one particle per line, `d` comma-separated decimal
/// fields, no header, 17 significant digits (lossless for f64).
pub fn write_cloud_csv<W: Write>(cloud: &ParticleCloud, mut w: W) -> Result<(), MeasureError> {
    for i in 0..cloud.len() {
        let row = cloud.positions().row(i);
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_cloud_csv_path<P: AsRef<Path>>(
    cloud: &ParticleCloud,
    path: P,
) -> Result<(), MeasureError> {
    let file = std::fs::File::create(path)?;
    write_cloud_csv(cloud, std::io::BufWriter::new(file))
}

/// Read a cloud from point-cloud CSV (see [`write_cloud_csv`]).
pub fn read_cloud_csv<R: std::io::Read>(r: R) -> Result<ParticleCloud, MeasureError> {
    let reader = BufReader::new(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|e| MeasureError::Csv {
                line: idx + 1,
                reason: format!("bad field {:?}: {e}", field.trim()),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(MeasureError::Csv {
                    line: idx + 1,
                    reason: format!("expected {} fields, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MeasureError::Csv {
            line: 0,
            reason: "no particles".to_string(),
        });
    }
    let d = rows[0].len();
    ParticleCloud::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

pub fn read_cloud_csv_path<P: AsRef<Path>>(path: P) -> Result<ParticleCloud, MeasureError> {
    read_cloud_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn center_subtracts_mean() {
        let c = ParticleCloud::from_rows(&[&[1.0, 1.0], &[3.0, 3.0]]);
        let centered = c.centered();
        let expect = ParticleCloud::from_rows(&[&[-1.0, -1.0], &[1.0, 1.0]]);
        assert_eq!(centered, expect);
    }

    #[test]
    fn center_single_particle_is_origin() {
        let c = ParticleCloud::from_rows(&[&[5.0]]);
        assert_eq!(c.centered(), ParticleCloud::from_rows(&[&[0.0]]));
    }

    #[test]
    fn center_is_idempotent() {
        let c = ParticleCloud::from_rows(&[&[0.3, -2.0], &[1.7, 4.1], &[-9.9, 0.2]]);
        let once = c.centered();
        let twice = once.centered();
        assert!((twice.positions() - once.positions()).amax() <= 1e-12);
        assert!(once.mean().norm() <= 1e-12);
    }

    #[test]
    fn center_leaves_exactly_centered_clouds_untouched() {
        let c = ParticleCloud::from_rows(&[&[-1.0, -1.0], &[1.0, 1.0]]);
        assert_eq!(c.centered(), c);
    }

    #[test]
    fn pushforward_substitutes_rows() {
        let c = ParticleCloud::from_rows(&[&[1.0, 0.0]]);
        let map = VelocityField::new(DMatrix::from_row_slice(1, 2, &[0.0, 3.0]));
        let out = c.pushforward(&map).unwrap();
        assert_eq!(out, ParticleCloud::from_rows(&[&[0.0, 3.0]]));
    }

    #[test]
    fn pushforward_identity_is_exact() {
        let c = ParticleCloud::from_rows(&[&[0.5, -1.5], &[2.0, 0.25]]);
        let out = c.pushforward(&VelocityField::identity_on(&c)).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn pushforward_rejects_shape_mismatch() {
        let c = ParticleCloud::from_rows(&[&[1.0, 0.0]]);
        let map = VelocityField::new(DMatrix::zeros(2, 2));
        assert!(matches!(
            c.pushforward(&map),
            Err(MeasureError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn empty_and_nonfinite_clouds_are_rejected() {
        assert!(matches!(
            ParticleCloud::new(DMatrix::zeros(0, 2)),
            Err(MeasureError::EmptyCloud { .. })
        ));
        let m = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(
            ParticleCloud::new(m),
            Err(MeasureError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn zero_covariance_is_rejected() {
        let err = GaussianState::new(DVector::zeros(2), DMatrix::zeros(2, 2));
        assert!(matches!(err, Err(MeasureError::NotSpd { .. })));
    }

    #[test]
    fn sampling_zero_particles_is_rejected() {
        let state = GaussianState::standard(2);
        assert!(matches!(
            sample_gaussian(RngSeed(1), 0, &state),
            Err(MeasureError::ZeroSamples)
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let state = GaussianState::standard(3);
        let a = sample_gaussian(RngSeed(9), 50, &state).unwrap();
        let b = sample_gaussian(RngSeed(9), 50, &state).unwrap();
        assert_eq!(a, b);
        let c = sample_gaussian(RngSeed(10), 50, &state).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_mean_obeys_law_of_large_numbers() {
        // 5 sigma / sqrt(n) with sigma = 1, n = 1e4.
        let state = GaussianState::standard(2);
        let cloud = sample_gaussian(RngSeed(2024), 10_000, &state).unwrap();
        let mean = cloud.mean();
        for c in 0..2 {
            assert!(
                mean[c].abs() < 5.0 / 100.0,
                "sample mean {} outside 5 sigma band",
                mean[c]
            );
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let state = GaussianState::standard(3);
        let cloud = sample_gaussian(RngSeed(7), 23, &state).unwrap();
        let mut buf = Vec::new();
        write_cloud_csv(&cloud, &mut buf).unwrap();
        let back = read_cloud_csv(buf.as_slice()).unwrap();
        assert_eq!(cloud, back);
    }

    #[test]
    fn csv_rejects_garbage() {
        let back = read_cloud_csv("1.0,2.0\n3.0,oops\n".as_bytes());
        assert!(matches!(back, Err(MeasureError::Csv { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn centering_twice_equals_once(
            rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 1..20)
        ) {
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let c = ParticleCloud::from_rows(&refs);
            let once = c.centered();
            let twice = once.centered();
            prop_assert!((twice.positions() - once.positions()).amax() <= 1e-12);
            prop_assert!(once.mean().norm() <= 1e-12);
        }
    }
}
