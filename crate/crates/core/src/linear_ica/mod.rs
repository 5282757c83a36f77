//! Linear ICA used after feature learning and as a baseline: whitening,
//! symmetric FastICA, and variance-nonstationarity ICA by orthogonal joint
//! diagonalization of segment covariances.

mod fastica;
mod nsvica;

pub use fastica::{fastica, Contrast, FastIcaConfig};
pub use nsvica::{joint_diagonalize, nsvica, JointDiagonalization};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, TclError};

/// Relative eigenvalue floor below which a covariance counts as singular.
const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub mean: DVector<f64>,
    /// Symmetric (ZCA) whitening map `Σ^{-1/2}`.
    pub matrix: DMatrix<f64>,
    /// Dewhitening map `Σ^{1/2}`.
    pub inverse: DMatrix<f64>,
}

impl WhiteningTransform {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        &self.matrix * centered
    }

    pub fn dewhiten(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = &self.inverse * z;
        for mut col in x.column_iter_mut() {
            col += &self.mean;
        }
        x
    }
}

/// Empirical covariance (divided by `N`) of the columns of `x`, which must
/// already be centred.
pub(crate) fn covariance(centered: &DMatrix<f64>) -> DMatrix<f64> {
    let n = centered.ncols() as f64;
    let mut c = centered * centered.transpose() / n;
    // Symmetrize away rounding asymmetry.
    let ct = c.transpose();
    c += ct;
    c *= 0.5;
    c
}

/// Symmetric matrix power `S^p` through the eigendecomposition.
pub(crate) fn sym_power(s: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let d = eig.eigenvalues.map(|v| v.powf(p));
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Centres and whitens `data` (`m × N`).
pub fn whiten(data: &DMatrix<f64>) -> Result<(WhiteningTransform, DMatrix<f64>)> {
    let (m, n) = data.shape();
    if m == 0 || n <= m {
        return Err(TclError::InvalidParameter(format!(
            "whitening needs more samples than dimensions, got {m}x{n}"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(TclError::NonFinite {
            what: "whitening input".into(),
        });
    }
    let mean = data.column_mean();
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = covariance(&centered);
    let eig = SymmetricEigen::new(cov);
    let max = eig.eigenvalues.max();
    let floor = EIGEN_FLOOR * max.max(f64::MIN_POSITIVE);
    let deficient: Vec<f64> = eig.eigenvalues.iter().copied().filter(|&v| v <= floor).collect();
    if !deficient.is_empty() {
        return Err(TclError::DeficientCovariance {
            eigenvalues: deficient,
            floor,
        });
    }
    let e = &eig.eigenvectors;
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.sqrt().recip()));
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let matrix = e * inv_sqrt * e.transpose();
    let inverse = e * sqrt * e.transpose();
    let whitened = &matrix * centered;
    Ok((
        WhiteningTransform {
            mean,
            matrix,
            inverse,
        },
        whitened,
    ))
}

/// Output of either linear ICA routine.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaResult {
    pub whitening: WhiteningTransform,
    /// Orthogonal `m × m` rotation acting on whitened data.
    pub unmixing: DMatrix<f64>,
    /// Recovered signals, `m × N`, unit variance rows.
    pub components: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final value of the routine's objective (lower is better).
    pub objective: f64,
    /// Objective after each iteration (FastICA) or sweep (NSVICA).
    pub objective_trace: Vec<f64>,
    /// Strength of the structure the method relies on, in units of its
    /// sampling noise under the null of no structure.
    pub signal_strength: f64,
    /// Raised when `signal_strength` is too weak for the rotation to be
    /// identifiable (Gaussian input for FastICA, stationary input for NSVICA).
    pub weak_signal: bool,
}

impl IcaResult {
    /// Full linear unmixing `unmixing · whitening` acting on centred data.
    pub fn full_unmixing(&self) -> DMatrix<f64> {
        &self.unmixing * &self.whitening.matrix
    }

    /// Recovered components of new data.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.unmixing * self.whitening.apply(x)
    }
}

/// Normalised Amari index of a performance matrix, in `[0, 1]`; zero
/// exactly when `p` is a scaled permutation.
pub fn amari_index(p: &DMatrix<f64>) -> Result<f64> {
    let m = p.nrows();
    if m != p.ncols() || m == 0 {
        return Err(TclError::mismatch("amari_index", "square matrix", format!("{}x{}", p.nrows(), p.ncols())));
    }
    if m == 1 {
        return if p[(0, 0)] == 0.0 {
            Err(TclError::InvalidParameter("amari_index: zero row".into()))
        } else {
            Ok(0.0)
        };
    }
    let a = p.abs();
    let mut total = 0.0;
    for (i, row) in a.row_iter().enumerate() {
        let max = row.max();
        if max == 0.0 {
            return Err(TclError::InvalidParameter(format!("amari_index: row {i} is zero")));
        }
        total += row.sum() / max - 1.0;
    }
    for (j, col) in a.column_iter().enumerate() {
        let max = col.max();
        if max == 0.0 {
            return Err(TclError::InvalidParameter(format!("amari_index: column {j} is zero")));
        }
        total += col.sum() / max - 1.0;
    }
    Ok(total / (2.0 * m as f64 * (m as f64 - 1.0)))
}
