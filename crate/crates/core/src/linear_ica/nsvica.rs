use nalgebra::{DMatrix, SymmetricEigen};

use super::{covariance, whiten, IcaResult};
use crate::error::{Result, TclError};

const MAX_SWEEPS: usize = 100;
/// Rotations with |sin θ| below this are skipped; a sweep without any
/// applied rotation ends the iteration.
const ROTATION_THRESHOLD: f64 = 1e-12;
/// Covariance spread (in units of its null sampling noise) below which the
/// input is treated as stationary.
const WEAK_SPREAD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct JointDiagonalization {
    /// Orthogonal `V` such that every `Vᵀ C_k V` is approximately diagonal.
    pub rotation: DMatrix<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Summed squared off-diagonal entries: initial value, then after every sweep.
    pub objective_trace: Vec<f64>,
}

fn off_diagonal(mats: &[DMatrix<f64>]) -> f64 {
    mats.iter()
        .map(|a| {
            let mut s = 0.0;
            for i in 0..a.nrows() {
                for j in 0..a.ncols() {
                    if i != j {
                        s += a[(i, j)] * a[(i, j)];
                    }
                }
            }
            s
        })
        .sum()
}

/// Orthogonal joint diagonalization of symmetric matrices by Jacobi
/// rotations; each rotation is the exact minimiser of the off-diagonal
/// criterion for its index pair.
pub fn joint_diagonalize(mats: &[DMatrix<f64>]) -> Result<JointDiagonalization> {
    let first = mats
        .first()
        .ok_or_else(|| TclError::InvalidParameter("no matrices to diagonalize".into()))?;
    let m = first.nrows();
    if mats.iter().any(|a| a.nrows() != m || a.ncols() != m) {
        return Err(TclError::mismatch("joint_diagonalize", format!("{m}x{m}"), "mixed shapes"));
    }
    let mut a: Vec<DMatrix<f64>> = mats.to_vec();
    let mut v = DMatrix::<f64>::identity(m, m);
    let mut trace = vec![off_diagonal(&a)];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..m {
            for q in p + 1..m {
                let (mut g00, mut g01, mut g11) = (0.0, 0.0, 0.0);
                for ak in &a {
                    let h0 = ak[(p, p)] - ak[(q, q)];
                    let h1 = ak[(p, q)] + ak[(q, p)];
                    g00 += h0 * h0;
                    g01 += h0 * h1;
                    g11 += h1 * h1;
                }
                let ton = g00 - g11;
                let toff = 2.0 * g01;
                let theta = 0.5 * toff.atan2(ton + ton.hypot(toff));
                let (s, c) = theta.sin_cos();
                if s.abs() <= ROTATION_THRESHOLD {
                    continue;
                }
                rotated = true;
                for i in 0..m {
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vp + s * vq;
                    v[(i, q)] = -s * vp + c * vq;
                }
                for ak in a.iter_mut() {
                    for j in 0..m {
                        let (xp, xq) = (ak[(p, j)], ak[(q, j)]);
                        ak[(p, j)] = c * xp + s * xq;
                        ak[(q, j)] = -s * xp + c * xq;
                    }
                    for i in 0..m {
                        let (xp, xq) = (ak[(i, p)], ak[(i, q)]);
                        ak[(i, p)] = c * xp + s * xq;
                        ak[(i, q)] = -s * xp + c * xq;
                    }
                }
            }
        }
        trace.push(off_diagonal(&a));
        if !rotated {
            converged = true;
            break;
        }
    }
    Ok(JointDiagonalization {
        rotation: v,
        sweeps,
        converged,
        objective_trace: trace,
    })
}

/// Linear ICA from nonstationary variances: global whitening, then one
/// rotation jointly diagonalizing all segment covariances.
pub fn nsvica(data: &DMatrix<f64>, labels: &[usize]) -> Result<IcaResult> {
    let m = data.nrows();
    if labels.len() != data.ncols() {
        return Err(TclError::mismatch("nsvica labels", data.ncols(), labels.len()));
    }
    let segments = labels.iter().max().map_or(0, |&l| l + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); segments];
    for (t, &l) in labels.iter().enumerate() {
        members[l].push(t);
    }
    members.retain(|cols| !cols.is_empty());
    if members.len() < 2 {
        return Err(TclError::InvalidParameter("nsvica needs at least 2 segments".into()));
    }
    if let Some(small) = members.iter().find(|cols| cols.len() <= m) {
        return Err(TclError::InvalidParameter(format!(
            "nsvica needs more than {m} samples per segment, found a segment with {}",
            small.len()
        )));
    }
    let (whitening, z) = whiten(data)?;

    let mut covs = Vec::with_capacity(members.len());
    for cols in &members {
        let mut seg = z.select_columns(cols);
        let mean = seg.column_mean();
        for mut col in seg.column_iter_mut() {
            col -= &mean;
        }
        let c = covariance(&seg);
        let eig = SymmetricEigen::new(c.clone()).eigenvalues;
        let floor = 1e-12 * eig.max().max(f64::MIN_POSITIVE);
        if !eig.iter().all(|v| v.is_finite()) || eig.min() <= floor {
            return Err(TclError::DeficientCovariance {
                eigenvalues: eig.iter().copied().filter(|&v| !(v > floor)).collect(),
                floor,
            });
        }
        covs.push(c);
    }

    // Spread of segment covariances against the sampling noise of a
    // stationary whitened series, ~ sqrt((m² + m) / n_k).
    let mean_cov = covs.iter().fold(DMatrix::zeros(m, m), |acc, c| acc + c) / covs.len() as f64;
    let spread = covs.iter().map(|c| (c - &mean_cov).norm()).sum::<f64>() / covs.len() as f64;
    let mean_len = members.iter().map(Vec::len).sum::<usize>() as f64 / members.len() as f64;
    let noise = ((m * m + m) as f64 / mean_len).sqrt();
    let signal_strength = spread / noise;

    let jd = joint_diagonalize(&covs)?;
    let unmixing = jd.rotation.transpose();
    let components = &unmixing * &z;
    Ok(IcaResult {
        whitening,
        unmixing,
        components,
        iterations: jd.sweeps,
        converged: jd.converged,
        objective: *jd.objective_trace.last().unwrap(),
        objective_trace: jd.objective_trace,
        signal_strength,
        weak_signal: signal_strength < WEAK_SPREAD,
    })
}
