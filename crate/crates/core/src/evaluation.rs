//! Scoring recovered components against the true modulated values `q(s)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::datagen::{standardize_rows, SourceFamily};
use crate::error::{Result, TclError};

/// `q(s)` applied entrywise, then each row standardized.
pub fn true_q_values(s: &DMatrix<f64>, family: SourceFamily) -> DMatrix<f64> {
    let mut q = s.map(|v| family.q(v));
    standardize_rows(&mut q);
    q
}

/// Maximum-weight assignment on a rectangular weight matrix (Hungarian
/// method with potentials). Returns, for every row, the matched column
/// when `rows <= cols`; otherwise every column is matched and unmatched
/// rows map to `None`.
pub fn max_weight_assignment(weights: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (r, c) = weights.shape();
    if r == 0 || c == 0 {
        return vec![None; r];
    }
    if r > c {
        let by_col = max_weight_assignment(&weights.transpose());
        let mut out = vec![None; r];
        for (j, i) in by_col.into_iter().enumerate() {
            if let Some(i) = i {
                out[i] = Some(j);
            }
        }
        return out;
    }
    // Minimise cost = -weight. 1-based potentials as in the classic formulation.
    let cost = |i: usize, j: usize| -weights[(i - 1, j - 1)];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; r + 1];
    let mut v = vec![0.0; c + 1];
    let mut owner = vec![0usize; c + 1];
    let mut way = vec![0usize; c + 1];
    for i in 1..=r {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; c + 1];
        let mut used = vec![false; c + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=c {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=c {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; r];
    for j in 1..=c {
        if owner[j] != 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Absolute Pearson correlation between every row of `a` and every row of
/// `b`. Constant rows get correlation 0; their indices are returned.
pub fn abs_correlation_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut za = a.clone();
    let mut zb = b.clone();
    for (i, sd) in standardize_rows(&mut za).into_iter().enumerate() {
        if sd == 0.0 {
            warnings.push(format!("truth row {i} is constant; its correlations are 0"));
        }
    }
    for (i, sd) in standardize_rows(&mut zb).into_iter().enumerate() {
        if sd == 0.0 {
            warnings.push(format!("estimate row {i} is constant; its correlations are 0"));
        }
    }
    let n = a.ncols() as f64;
    let corr = (&za * zb.transpose() / n).map(|v: f64| v.abs().min(1.0));
    (corr, warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMatch {
    /// `(truth row, estimate row)` pairs.
    pub assignment: Vec<(usize, usize)>,
    /// |corr| of each matched pair, in `assignment` order.
    pub per_component: Vec<f64>,
    pub mean_abs_corr: f64,
    pub warnings: Vec<String>,
}

/// Pairs true and estimated components by exact maximum-weight matching on
/// absolute correlations.
pub fn match_components(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<ComponentMatch> {
    if truth.ncols() != est.ncols() {
        return Err(TclError::mismatch("match_components samples", truth.ncols(), est.ncols()));
    }
    if truth.ncols() < 3 {
        return Err(TclError::InvalidParameter(format!(
            "need at least 3 samples to correlate, got {}",
            truth.ncols()
        )));
    }
    if truth.nrows() == 0 || est.nrows() == 0 {
        return Err(TclError::InvalidParameter("no components to match".into()));
    }
    let (corr, warnings) = abs_correlation_matrix(truth, est);
    let assignment: Vec<(usize, usize)> = max_weight_assignment(&corr)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect();
    let per_component: Vec<f64> = assignment.iter().map(|&(i, j)| corr[(i, j)]).collect();
    let mean_abs_corr = per_component.iter().sum::<f64>() / per_component.len() as f64;
    Ok(ComponentMatch {
        assignment,
        per_component,
        mean_abs_corr,
        warnings,
    })
}

/// Least-squares fit of `q = A h + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFit {
    /// Coefficient of determination per `q` row.
    pub r2: Vec<f64>,
    /// `n × m`.
    pub coefficients: DMatrix<f64>,
    pub offset: DVector<f64>,
    /// Condition number of `coefficients` (∞ when singular or non-square rank-deficient).
    pub condition_number: f64,
}

/// Regresses each row of `q_true` on `[h; 1]` and reports R² per component.
pub fn theorem1_check(q_true: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<AffineFit> {
    let (n, samples) = q_true.shape();
    let m = h.nrows();
    if h.ncols() != samples {
        return Err(TclError::mismatch("affine fit samples", samples, h.ncols()));
    }
    if samples <= m + 1 {
        return Err(TclError::InvalidParameter(format!(
            "affine fit needs more than {} samples, got {samples}",
            m + 1
        )));
    }
    let center = |x: &DMatrix<f64>| {
        let mean = x.column_mean();
        let mut c = x.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        (mean, c)
    };
    let (q_mean, qc) = center(q_true);
    let (h_mean, hc) = center(h);
    let gram = &hc * hc.transpose();
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let floor = 1e-12 * eig.max().max(f64::MIN_POSITIVE);
    if eig.min() <= floor {
        return Err(TclError::RankDeficient {
            matrix: "feature regressor",
            rank: eig.iter().filter(|&&v| v > floor).count(),
            required: m,
            attempts: 1,
        });
    }
    let cross = &hc * qc.transpose(); // m × n
    let solution = gram
        .cholesky()
        .ok_or(TclError::RankDeficient {
            matrix: "feature regressor",
            rank: 0,
            required: m,
            attempts: 1,
        })?
        .solve(&cross);
    let coefficients = solution.transpose(); // n × m
    let offset = &q_mean - &coefficients * &h_mean;
    let resid = &qc - &coefficients * &hc;
    let r2 = (0..n)
        .map(|i| {
            let ss_tot = qc.row(i).norm_squared();
            let ss_res = resid.row(i).norm_squared();
            if ss_tot == 0.0 {
                0.0
            } else {
                1.0 - ss_res / ss_tot
            }
        })
        .collect();
    let condition_number = if n == m {
        crate::datagen::condition_number(&coefficients)
    } else {
        let sv = coefficients.clone().svd(false, false).singular_values;
        if sv.min() == 0.0 { f64::INFINITY } else { sv.max() / sv.min() }
    };
    Ok(AffineFit {
        r2,
        coefficients,
        offset,
        condition_number,
    })
}

/// Per-run evaluation record, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub depth: usize,
    pub segments: usize,
    pub seed: u64,
    pub mean_abs_corr: f64,
    pub per_component_corr: Vec<f64>,
    pub assignment: Vec<(usize, usize)>,
    pub classification_accuracy: Option<f64>,
    pub chance_level: Option<f64>,
    pub theorem1_r2: Option<Vec<f64>>,
    pub theorem1_condition: Option<f64>,
    pub ica_converged: bool,
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Checks the declared value ranges and that the assignment is a bijection
    /// onto its image.
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let bad = |what: &str| Err(TclError::InvalidParameter(format!("report field out of range: {what}")));
        if !in_unit(self.mean_abs_corr) || !self.per_component_corr.iter().all(|&v| in_unit(v)) {
            return bad("correlation");
        }
        let mean = self.per_component_corr.iter().sum::<f64>() / self.per_component_corr.len().max(1) as f64;
        if (mean - self.mean_abs_corr).abs() > 1e-12 {
            return bad("mean_abs_corr");
        }
        let mut rows: Vec<usize> = self.assignment.iter().map(|p| p.0).collect();
        let mut cols: Vec<usize> = self.assignment.iter().map(|p| p.1).collect();
        rows.sort_unstable();
        cols.sort_unstable();
        rows.dedup();
        cols.dedup();
        if rows.len() != self.assignment.len() || cols.len() != self.assignment.len() {
            return bad("assignment");
        }
        for v in [self.classification_accuracy, self.chance_level].into_iter().flatten() {
            if !in_unit(v) {
                return bad("accuracy");
            }
        }
        if let Some(r2) = &self.theorem1_r2 {
            if r2.iter().any(|&v| !(v <= 1.0 + 1e-12)) {
                return bad("theorem1_r2");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::seeded(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r))
    }

    fn brute_force_best(w: &DMatrix<f64>) -> f64 {
        fn rec(w: &DMatrix<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == w.nrows() {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for j in 0..w.ncols() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(w[(row, j)] + rec(w, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(w, 0, &mut vec![false; w.ncols()])
    }

    #[test]
    fn q_values_before_and_after_standardization() {
        let s = DMatrix::from_row_slice(1, 2, &[-3.0, 2.0]);
        assert_eq!(s.map(|v| SourceFamily::Laplacian.q(v)).as_slice(), &[-3.0, -2.0]);
        assert_eq!(SourceFamily::Gaussian.q(2.0), -2.0);
        let q = true_q_values(&gaussian(3, 1000, 1), SourceFamily::Laplacian);
        for row in q.row_iter() {
            let mean = row.sum() / 1000.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1000.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cross_assignment_wins_on_small_example() {
        let w = DMatrix::from_row_slice(2, 2, &[0.9, 0.8, 0.85, 0.1]);
        // (1→1)+(2→2) = 1.0 against (1→2)+(2→1) = 1.65.
        assert_eq!(max_weight_assignment(&w), vec![Some(1), Some(0)]);
    }

    #[test]
    fn rectangular_assignment() {
        let w = DMatrix::from_row_slice(2, 3, &[0.1, 0.9, 0.2, 0.8, 0.7, 0.3]);
        assert_eq!(max_weight_assignment(&w), vec![Some(1), Some(0)]);
        assert_eq!(max_weight_assignment(&w.transpose()), vec![Some(1), Some(0), None]);
    }

    #[test]
    fn permuted_sign_flipped_estimates_match_perfectly() {
        let truth = gaussian(4, 500, 2);
        let order = [2, 0, 3, 1];
        let est = DMatrix::from_fn(4, 500, |i, j| {
            let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
            sign * truth[(order[i], j)] * (i as f64 + 1.0) + 3.0
        });
        let m = match_components(&truth, &est).unwrap();
        for &c in &m.per_component {
            assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
        }
        for &(i, j) in &m.assignment {
            assert_eq!(order[j], i);
        }
    }

    #[test]
    fn independent_noise_has_small_matched_correlation() {
        let m = match_components(&gaussian(4, 1000, 3), &gaussian(4, 1000, 4)).unwrap();
        // Null |corr| has sd 1/sqrt(1000) ~ 0.032; a max over 16 pairs stays well below 0.15.
        assert!(m.per_component.iter().all(|&c| c < 0.15), "{:?}", m.per_component);
    }

    #[test]
    fn constant_rows_get_zero_correlation() {
        let truth = gaussian(2, 50, 5);
        let mut est = gaussian(2, 50, 6);
        est.row_mut(1).fill(4.0);
        let m = match_components(&truth, &est).unwrap();
        assert_eq!(m.warnings.len(), 1);
        assert!(m.per_component.contains(&0.0));
    }

    #[test]
    fn match_needs_three_samples() {
        assert!(match_components(&gaussian(2, 2, 0), &gaussian(2, 2, 1)).is_err());
    }

    #[test]
    fn self_regression_is_exact() {
        let q = gaussian(3, 200, 7);
        let fit = theorem1_check(&q, &q).unwrap();
        for r in &fit.r2 {
            assert_abs_diff_eq!(*r, 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(fit.coefficients, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn affine_closure() {
        let q = gaussian(3, 300, 8);
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, -0.5, 0.3, 1.0, 0.2, 0.0, -1.5]);
        let mut h = &m * &q;
        for mut col in h.column_iter_mut() {
            col += DVector::from_vec(vec![1.0, -2.0, 0.5]);
        }
        let fit = theorem1_check(&q, &h).unwrap();
        for r in &fit.r2 {
            assert_abs_diff_eq!(*r, 1.0, epsilon = 1e-10);
        }
        assert!(fit.condition_number.is_finite());
    }

    #[test]
    fn rank_deficient_regressor() {
        let q = gaussian(2, 100, 9);
        let mut h = gaussian(2, 100, 10);
        let r0 = h.row(0).clone_owned();
        h.row_mut(1).copy_from(&r0);
        assert!(matches!(theorem1_check(&q, &h), Err(TclError::RankDeficient { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hungarian_is_optimal(n in 1usize..=6, entries in proptest::collection::vec(0.0f64..1.0, 36)) {
            let w = DMatrix::from_fn(n, n, |i, j| entries[i * 6 + j]);
            let assign = max_weight_assignment(&w);
            let total: f64 = assign.iter().enumerate().map(|(i, j)| w[(i, j.unwrap())]).sum();
            prop_assert!((total - brute_force_best(&w)).abs() < 1e-12);
        }

        #[test]
        fn r2_invariant_under_affine_maps_of_h(seed in 0u64..500) {
            let q = gaussian(2, 150, seed);
            let h = gaussian(3, 150, seed + 1000) + DMatrix::from_fn(3, 150, |i, j| q[(i % 2, j)]);
            let mut r = rng::seeded(seed + 2000);
            let mut m = DMatrix::from_fn(3, 3, |_, _| StandardNormal.sample(&mut r));
            m += DMatrix::identity(3, 3) * 3.0;
            let h2 = &m * &h + DMatrix::from_element(3, 150, 0.7);
            let a = theorem1_check(&q, &h).unwrap();
            let b = theorem1_check(&q, &h2).unwrap();
            for (x, y) in a.r2.iter().zip(&b.r2) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn mean_corr_invariant_to_row_affine_maps(seed in 0u64..500, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
            let truth = gaussian(3, 200, seed);
            let est = gaussian(3, 200, seed + 1) + &truth;
            let est2 = DMatrix::from_fn(3, 200, |i, j| {
                let sign = if i == 1 { -1.0 } else { 1.0 };
                sign * scale * est[((i + 1) % 3, j)] + shift
            });
            let a = match_components(&truth, &est).unwrap();
            let b = match_components(&truth, &est2).unwrap();
            prop_assert!((a.mean_abs_corr - b.mean_abs_corr).abs() < 1e-12);
        }
    }
}
