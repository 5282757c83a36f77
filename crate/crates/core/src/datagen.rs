//! Nonstationary source generation and invertible nonlinear mixing.
//!
//! Sources are split into equal-length segments. Inside segment `τ` the
//! density of component `i` is `exp(λ_i(τ) q(s)) / Z`, where `q` is the
//! modulated function of the chosen [`SourceFamily`]. The observations are
//! `x = f(s)` with `f` a stack of square leaky-ReLU layers.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TclError};
use crate::rng;

const MAX_MODULATION_ATTEMPTS: usize = 100;
const MAX_MIXING_ATTEMPTS: usize = 1000;
const RANK_TOLERANCE: f64 = 1e-10;

/// Source family with a single modulated function and a flat baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceFamily {
    /// `q(s) = -|s|`, density `∝ exp(-λ|s|)`.
    #[default]
    Laplacian,
    /// `q(s) = -s²/2`, zero-mean normal with precision `λ`.
    Gaussian,
}

impl SourceFamily {
    /// The modulated function. Even, continuous, maximal (zero) at the origin.
    #[inline]
    pub fn q(self, s: f64) -> f64 {
        match self {
            SourceFamily::Laplacian => -s.abs(),
            SourceFamily::Gaussian => -0.5 * s * s,
        }
    }

    fn sample(self, lambda: f64, rng: &mut rng::Rng) -> f64 {
        match self {
            SourceFamily::Laplacian => {
                let e: f64 = Exp1.sample(rng);
                let magnitude = e / lambda;
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
            SourceFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                z / lambda.sqrt()
            }
        }
    }

    /// Variance of a single draw with modulation `lambda`.
    pub fn variance(self, lambda: f64) -> f64 {
        match self {
            SourceFamily::Laplacian => 2.0 / (lambda * lambda),
            SourceFamily::Gaussian => 1.0 / lambda,
        }
    }
}

impl std::str::FromStr for SourceFamily {
    type Err = TclError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplacian" | "laplace" => Ok(SourceFamily::Laplacian),
            "gaussian" | "normal" => Ok(SourceFamily::Gaussian),
            other => Err(TclError::InvalidParameter(format!(
                "unknown source family {other:?}"
            ))),
        }
    }
}

/// Segment-wise modulation parameters and their differences from segment 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationMatrix {
    /// `segments × n`, strictly positive.
    pub lambdas: DMatrix<f64>,
    /// `segments × n`, row `τ` is `lambdas[τ] - lambdas[0]`.
    pub differenced: DMatrix<f64>,
}

impl ModulationMatrix {
    /// Validates explicit modulations: positive entries and a differenced
    /// matrix of full column rank.
    pub fn from_lambdas(lambdas: DMatrix<f64>) -> Result<Self> {
        if lambdas.nrows() < 2 || lambdas.ncols() == 0 {
            return Err(TclError::InvalidParameter(format!(
                "modulations need at least 2 segments and 1 component, got {}x{}",
                lambdas.nrows(),
                lambdas.ncols()
            )));
        }
        if lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(TclError::InvalidParameter(
                "modulation parameters must be positive and finite".into(),
            ));
        }
        let m = Self::unchecked(lambdas);
        let rank = m.differenced_rank();
        if rank < m.components() {
            return Err(TclError::RankDeficient {
                matrix: "differenced modulation matrix",
                rank,
                required: m.components(),
                attempts: 1,
            });
        }
        Ok(m)
    }

    fn unchecked(lambdas: DMatrix<f64>) -> Self {
        let first = lambdas.row(0).clone_owned();
        let mut differenced = lambdas.clone();
        for mut row in differenced.row_iter_mut() {
            row -= &first;
        }
        ModulationMatrix {
            lambdas,
            differenced,
        }
    }

    pub fn segments(&self) -> usize {
        self.lambdas.nrows()
    }

    pub fn components(&self) -> usize {
        self.lambdas.ncols()
    }

    /// Numerical column rank of the differenced matrix.
    pub fn differenced_rank(&self) -> usize {
        numerical_rank(&self.differenced)
    }
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}

/// Draws modulations uniformly from `[lambda_min, 1]`, resampling until the
/// differenced matrix has full column rank.
pub fn sample_modulations(
    n: usize,
    segments: usize,
    lambda_min: f64,
    seed: u64,
) -> Result<ModulationMatrix> {
    if n == 0 {
        return Err(TclError::InvalidParameter("n must be at least 1".into()));
    }
    if segments < 2 {
        return Err(TclError::InvalidParameter(format!(
            "need at least 2 segments, got {segments}"
        )));
    }
    if !(lambda_min > 0.0 && lambda_min < 1.0) {
        return Err(TclError::InvalidParameter(format!(
            "lambda_min must lie in (0, 1), got {lambda_min}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut best_rank = 0;
    for _ in 0..MAX_MODULATION_ATTEMPTS {
        let lambdas =
            DMatrix::from_fn(segments, n, |_, _| rng.random_range(lambda_min..=1.0));
        let m = ModulationMatrix::unchecked(lambdas);
        let rank = m.differenced_rank();
        if rank == n {
            return Ok(m);
        }
        best_rank = best_rank.max(rank);
    }
    Err(TclError::RankDeficient {
        matrix: "differenced modulation matrix",
        rank: best_rank,
        required: n,
        attempts: MAX_MODULATION_ATTEMPTS,
    })
}

/// Ground-truth sources, `n × (segments · seg_len)`, one column per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTensor {
    pub values: DMatrix<f64>,
    pub seg_len: usize,
    pub segments: usize,
    /// Trailing components whose modulation does not change across segments.
    pub stationary_count: usize,
}

impl SourceTensor {
    pub fn components(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    /// Zero-based segment index of time step `t`.
    #[inline]
    pub fn segment_of(&self, t: usize) -> usize {
        t / self.seg_len
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|t| self.segment_of(t)).collect()
    }

    /// Rescales every component to zero mean and unit variance over the
    /// whole series. Returns the per-component scale that was divided out.
    pub fn standardize(&mut self) -> Vec<f64> {
        standardize_rows(&mut self.values)
    }
}

/// Row-wise standardization in place; returns the standard deviations.
/// Constant rows are centered but left unscaled (their std is reported as 0).
pub fn standardize_rows(m: &mut DMatrix<f64>) -> Vec<f64> {
    let n = m.ncols() as f64;
    let mut scales = Vec::with_capacity(m.nrows());
    for mut row in m.row_iter_mut() {
        let mean = row.sum() / n;
        row.add_scalar_mut(-mean);
        let var = row.norm_squared() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            row /= sd;
        }
        scales.push(sd);
    }
    scales
}

/// Samples sources segment by segment from the modulated family.
pub fn sample_sources(
    mods: &ModulationMatrix,
    family: SourceFamily,
    seg_len: usize,
    stationary_count: usize,
    seed: u64,
) -> Result<SourceTensor> {
    let n = mods.components();
    let segments = mods.segments();
    if seg_len == 0 {
        return Err(TclError::InvalidParameter("seg_len must be at least 1".into()));
    }
    if stationary_count >= n {
        return Err(TclError::InvalidParameter(format!(
            "stationary_count {stationary_count} must be below n = {n}"
        )));
    }
    let first_stationary = n - stationary_count;
    let mut rng = rng::seeded(seed);
    let mut values = DMatrix::zeros(n, segments * seg_len);
    // Component-major draw order keeps components independent streams of one generator.
    for i in 0..n {
        for tau in 0..segments {
            let lambda = if i >= first_stationary {
                mods.lambdas[(0, i)]
            } else {
                mods.lambdas[(tau, i)]
            };
            for t in tau * seg_len..(tau + 1) * seg_len {
                values[(i, t)] = family.sample(lambda, &mut rng);
            }
        }
    }
    Ok(SourceTensor {
        values,
        seg_len,
        segments,
        stationary_count,
    })
}

/// One square affine layer of the mixing network.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingLayer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Invertible nonlinear mixing `f`: affine layers with a leaky ReLU between
/// consecutive layers and none after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingNetwork {
    pub layers: Vec<MixingLayer>,
    pub leaky_slope: f64,
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_inverse(y: f64, slope: f64) -> f64 {
    if y >= 0.0 {
        y
    } else {
        y / slope
    }
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        sv.max() / min
    }
}

impl MixingNetwork {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.nrows())
    }

    /// Applies `f` to every column of `s`.
    pub fn forward(&self, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if s.nrows() != self.dim() {
            return Err(TclError::mismatch("apply_mixing", self.dim(), s.nrows()));
        }
        let last = self.layers.len() - 1;
        let mut x = s.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            x = &layer.weight * &x;
            for mut col in x.column_iter_mut() {
                col += &layer.bias;
            }
            if k < last {
                x.apply(|v| *v = leaky_relu(*v, self.leaky_slope));
            }
        }
        Ok(x)
    }
}

/// Builds a random invertible mixing network with Glorot-uniform weights.
/// Layers whose condition number exceeds `cond_bound` are redrawn.
pub fn build_mixing(
    n: usize,
    depth: usize,
    leaky_slope: f64,
    cond_bound: f64,
    seed: u64,
) -> Result<MixingNetwork> {
    if n == 0 || depth == 0 {
        return Err(TclError::InvalidParameter(format!(
            "mixing needs n >= 1 and depth >= 1, got n = {n}, depth = {depth}"
        )));
    }
    if !(leaky_slope > 0.0 && leaky_slope < 1.0) {
        return Err(TclError::InvalidParameter(format!(
            "leaky_slope must lie in (0, 1), got {leaky_slope}"
        )));
    }
    if !(cond_bound >= 1.0) {
        return Err(TclError::InvalidParameter(format!(
            "cond_bound must be at least 1, got {cond_bound}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let bound = (6.0 / (2 * n) as f64).sqrt();
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let mut best = f64::INFINITY;
        let mut accepted = None;
        for _ in 0..MAX_MIXING_ATTEMPTS {
            let w = DMatrix::from_fn(n, n, |_, _| rng.random_range(-bound..=bound));
            let c = condition_number(&w);
            if c <= cond_bound {
                accepted = Some(w);
                break;
            }
            best = best.min(c);
        }
        let weight = accepted.ok_or(TclError::IllConditioned {
            bound: cond_bound,
            best,
            attempts: MAX_MIXING_ATTEMPTS,
        })?;
        layers.push(MixingLayer {
            weight,
            bias: DVector::zeros(n),
        });
    }
    Ok(MixingNetwork {
        layers,
        leaky_slope,
    })
}

/// Mixed observations with their segment labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    /// `n × N`, one observation per column.
    pub values: DMatrix<f64>,
    /// Zero-based segment label per column.
    pub labels: Vec<usize>,
    pub segments: usize,
    pub seg_len: usize,
}

impl ObservationSeries {
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }
}

pub fn apply_mixing(net: &MixingNetwork, s: &SourceTensor) -> Result<ObservationSeries> {
    let values = net.forward(&s.values)?;
    Ok(ObservationSeries {
        values,
        labels: s.labels(),
        segments: s.segments,
        seg_len: s.seg_len,
    })
}

/// Exact inverse of the mixing network, undoing one layer at a time.
pub fn invert_mixing(net: &MixingNetwork, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != net.dim() {
        return Err(TclError::mismatch("invert_mixing", net.dim(), x.nrows()));
    }
    let last = net.layers.len() - 1;
    let mut y = x.clone();
    for (k, layer) in net.layers.iter().enumerate().rev() {
        if k < last {
            y.apply(|v| *v = leaky_relu_inverse(*v, net.leaky_slope));
        }
        for mut col in y.column_iter_mut() {
            col -= &layer.bias;
        }
        let lu = layer.weight.clone().lu();
        y = lu.solve(&y).ok_or(TclError::SingularLayer(k))?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn small_modulation_grid() {
        let m = sample_modulations(2, 4, 0.1, 7).unwrap();
        assert_eq!(m.lambdas.shape(), (4, 2));
        assert!(m.lambdas.iter().all(|&l| (0.1..=1.0).contains(&l)));
        assert_eq!(m.differenced.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(m.differenced_rank(), 2);
    }

    #[test]
    fn equal_modulations_fail_rank_check() {
        let err = ModulationMatrix::from_lambdas(DMatrix::from_element(2, 1, 0.5)).unwrap_err();
        assert!(matches!(err, TclError::RankDeficient { rank: 0, required: 1, .. }));
    }

    #[test]
    fn too_few_segments_exhaust_retries() {
        // T = n leaves only n - 1 nonzero rows in the differenced matrix.
        let err = sample_modulations(3, 3, 0.1, 1).unwrap_err();
        assert!(matches!(err, TclError::RankDeficient { attempts: 100, .. }));
    }

    #[test]
    fn rejects_bad_modulation_parameters() {
        assert!(sample_modulations(0, 4, 0.1, 0).is_err());
        assert!(sample_modulations(2, 1, 0.1, 0).is_err());
        assert!(sample_modulations(2, 4, 0.0, 0).is_err());
        assert!(sample_modulations(2, 4, 1.0, 0).is_err());
    }

    #[test]
    fn family_q_values() {
        assert_eq!(SourceFamily::Laplacian.q(-3.0), -3.0);
        assert_eq!(SourceFamily::Laplacian.q(2.0), -2.0);
        assert_eq!(SourceFamily::Gaussian.q(2.0), -2.0);
        for s in [-4.0, -0.3, 0.0, 1.5] {
            for f in [SourceFamily::Laplacian, SourceFamily::Gaussian] {
                assert_eq!(f.q(s), f.q(-s));
                assert!(f.q(s) <= f.q(0.0));
            }
        }
        assert_eq!(SourceFamily::Laplacian.q(0.0), 0.0);
        assert!(SourceFamily::Laplacian.q(1e12) < -1e11);
    }

    #[test]
    fn laplacian_and_gaussian_variances() {
        let one = ModulationMatrix::unchecked(DMatrix::from_element(2, 1, 1.0));
        let s = sample_sources(&one, SourceFamily::Laplacian, 50_000, 0, 3).unwrap();
        let var = s.values.row(0).iter().map(|v| v * v).sum::<f64>() / 1e5;
        assert!((var - 2.0).abs() < 0.05, "laplacian variance {var}");

        let four = ModulationMatrix::unchecked(DMatrix::from_element(2, 1, 4.0));
        let s = sample_sources(&four, SourceFamily::Gaussian, 50_000, 0, 3).unwrap();
        let var = s.values.row(0).iter().map(|v| v * v).sum::<f64>() / 1e5;
        assert!((var - 0.25).abs() < 0.01, "gaussian variance {var}");
    }

    #[test]
    fn stationary_components_share_segment_one_modulation() {
        let mods = sample_modulations(3, 6, 0.1, 11).unwrap();
        let s = sample_sources(&mods, SourceFamily::Laplacian, 4000, 2, 5).unwrap();
        for i in 1..3 {
            let vars: Vec<f64> = (0..6)
                .map(|tau| {
                    let seg = s.values.view((i, tau * 4000), (1, 4000));
                    seg.iter().map(|v| v * v).sum::<f64>() / 4000.0
                })
                .collect();
            let expected = SourceFamily::Laplacian.variance(mods.lambdas[(0, i)]);
            for v in vars {
                // Laplace fourth moment is 24/λ⁴, so the sd of the estimate is ~ sqrt(5)·var/sqrt(4000).
                assert!((v / expected - 1.0).abs() < 6.0 * (5.0f64 / 4000.0).sqrt());
            }
        }
    }

    #[test]
    fn stationary_count_must_leave_a_component() {
        let mods = sample_modulations(2, 4, 0.1, 0).unwrap();
        assert!(sample_sources(&mods, SourceFamily::Laplacian, 10, 2, 0).is_err());
        assert!(sample_sources(&mods, SourceFamily::Laplacian, 0, 0, 0).is_err());
    }

    #[test]
    fn segment_labels_follow_seg_len() {
        let mods = sample_modulations(1, 3, 0.1, 0).unwrap();
        let s = sample_sources(&mods, SourceFamily::Laplacian, 4, 0, 0).unwrap();
        assert_eq!(s.labels(), vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn depth_one_is_linear() {
        let net = build_mixing(3, 1, 0.2, 1e4, 4).unwrap();
        let a = DMatrix::from_fn(3, 5, |i, j| (i as f64 - j as f64) * 0.7);
        let b = DMatrix::from_fn(3, 5, |i, j| (i * j) as f64 - 2.0);
        let lhs = net.forward(&(&a * 2.0 - &b)).unwrap();
        let rhs = net.forward(&a).unwrap() * 2.0 - net.forward(&b).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn identity_layers_apply_leaky_relu_between() {
        let id = MixingLayer {
            weight: DMatrix::identity(2, 2),
            bias: DVector::zeros(2),
        };
        let net = MixingNetwork {
            layers: vec![id.clone(), id],
            leaky_slope: 0.2,
        };
        let x = net.forward(&DMatrix::from_column_slice(2, 1, &[-1.0, 2.0])).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], -0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(x[(1, 0)], 2.0, epsilon = 1e-15);
        let back = invert_mixing(&net, &x).unwrap();
        assert_abs_diff_eq!(back[(0, 0)], -1.0, epsilon = 1e-15);
        assert_eq!(leaky_relu_inverse(-0.2, 0.2), -1.0);
    }

    #[test]
    fn identity_network_is_identity() {
        let net = MixingNetwork {
            layers: vec![MixingLayer {
                weight: DMatrix::identity(3, 3),
                bias: DVector::zeros(3),
            }],
            leaky_slope: 0.2,
        };
        let s = DMatrix::from_fn(3, 4, |i, j| i as f64 * 1.5 - j as f64);
        assert_eq!(net.forward(&s).unwrap(), s);
        assert_eq!(invert_mixing(&net, &s).unwrap(), s);
    }

    #[test]
    fn round_trip_inversion() {
        for seed in 0..20 {
            let net = build_mixing(6, 4, 0.2, 1e4, seed).unwrap();
            let s = DMatrix::from_fn(6, 50, |i, j| (((i * 31 + j * 17 + seed as usize) % 23) as f64 - 11.0) / 5.0);
            let back = invert_mixing(&net, &net.forward(&s).unwrap()).unwrap();
            let dev = (back - &s).amax();
            assert!(dev < 1e-8, "seed {seed}: deviation {dev:e}, conds {:?}", net.layers.iter().map(|l| condition_number(&l.weight)).collect::<Vec<_>>());
        }
    }

    #[test]
    fn accepted_layers_respect_condition_bound() {
        let net = build_mixing(8, 3, 0.2, 50.0, 9).unwrap();
        for l in &net.layers {
            assert!(condition_number(&l.weight) <= 50.0);
        }
        assert!(matches!(
            build_mixing(8, 1, 0.2, 1.0 + 1e-9, 9),
            Err(TclError::IllConditioned { .. })
        ));
    }

    #[test]
    fn singular_layer_reported() {
        let net = MixingNetwork {
            layers: vec![MixingLayer {
                weight: DMatrix::zeros(2, 2),
                bias: DVector::zeros(2),
            }],
            leaky_slope: 0.2,
        };
        assert!(matches!(
            invert_mixing(&net, &DMatrix::zeros(2, 1)),
            Err(TclError::SingularLayer(0))
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = build_mixing(3, 2, 0.2, 1e4, 0).unwrap();
        assert!(net.forward(&DMatrix::zeros(2, 4)).is_err());
        assert!(invert_mixing(&net, &DMatrix::zeros(4, 4)).is_err());
    }

    #[test]
    fn per_segment_output_covariance_tracks_modulation() {
        let mods = sample_modulations(4, 6, 0.1, 21).unwrap();
        let mut s = sample_sources(&mods, SourceFamily::Laplacian, 2000, 0, 22).unwrap();
        s.standardize();
        let net = build_mixing(4, 3, 0.2, 1e4, 23).unwrap();
        let obs = apply_mixing(&net, &s).unwrap();
        let traces: Vec<f64> = (0..6)
            .map(|tau| {
                let seg = obs.values.columns(tau * 2000, 2000);
                let mean = seg.column_mean();
                seg.column_iter().map(|c| (c - &mean).norm_squared()).sum::<f64>() / 2000.0
            })
            .collect();
        let min = traces.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = traces.iter().cloned().fold(0.0, f64::max);
        assert!(max / min > 1.5, "segment traces too similar: {traces:?}");
        assert_eq!(obs.labels[1999], 0);
        assert_eq!(obs.labels[2000], 1);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = sample_modulations(3, 8, 0.1, 5).unwrap();
        let b = sample_modulations(3, 8, 0.1, 5).unwrap();
        assert_eq!(a, b);
        let sa = sample_sources(&a, SourceFamily::Laplacian, 32, 0, 6).unwrap();
        let sb = sample_sources(&b, SourceFamily::Laplacian, 32, 0, 6).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(build_mixing(3, 2, 0.2, 1e4, 1).unwrap(), build_mixing(3, 2, 0.2, 1e4, 1).unwrap());
    }

    #[test]
    fn standardize_gives_unit_variance() {
        let mods = sample_modulations(3, 4, 0.1, 2).unwrap();
        let mut s = sample_sources(&mods, SourceFamily::Laplacian, 100, 0, 2).unwrap();
        s.standardize();
        for row in s.values.row_iter() {
            let mean = row.sum() / 400.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 400.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
        }
    }
}
