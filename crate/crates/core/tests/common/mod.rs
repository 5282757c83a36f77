#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcl_core::network::{
    features_forward, init_params, tcl_gradients, tcl_loss, ModelShape, OutputActivation, TclModel,
};

/// Flat indices of the frozen pivot parameters (MLR column 0 and bias 0).
pub fn pivot_indices(model: &TclModel) -> Vec<usize> {
    let m = model.mlr.weights.nrows();
    let t = model.mlr.segments();
    let start = model.parameter_count() - m * t - t;
    let mut idx: Vec<usize> = (start..start + m).collect();
    idx.push(start + m * t);
    idx
}

/// Central finite-difference gradient of `tcl_loss`, computed only through
/// forward evaluations. Frozen pivot parameters get 0.
pub fn finite_difference_gradient(
    model: &TclModel,
    x: &DMatrix<f64>,
    labels: &[usize],
    l2: f64,
    step: f64,
) -> Vec<f64> {
    let base = model.to_flat();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut params = base.clone();
    let frozen = pivot_indices(model);
    for k in 0..base.len() {
        if frozen.contains(&k) {
            out.push(0.0);
            continue;
        }
        params[k] = base[k] + step;
        probe.set_flat(&params).unwrap();
        let up = tcl_loss(&probe, x, labels, l2).unwrap();
        params[k] = base[k] - step;
        probe.set_flat(&params).unwrap();
        let down = tcl_loss(&probe, x, labels, l2).unwrap();
        params[k] = base[k];
        out.push((up - down) / (2.0 * step));
    }
    out
}

/// Relative error with an absolute floor of 1e-4 so that exactly-zero
/// gradients are compared against finite-difference round-off sensibly.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

pub struct GradientCase {
    pub model: TclModel,
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub l2: f64,
}

/// Random small configuration (n ≤ 5, T ≤ 4, depth ≤ 2, widths ≤ 6) whose
/// inputs sit at least `margin` away from every activation kink.
pub fn random_case(seed: u64, margin: f64) -> GradientCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=5);
    let segments = rng.random_range(2..=4);
    let depth = rng.random_range(1..=2);
    let hidden_widths: Vec<usize> = (1..depth).map(|_| rng.random_range(1..=6)).collect();
    let activation = if rng.random::<bool>() {
        OutputActivation::Abs
    } else {
        OutputActivation::Adaptive
    };
    let shape = ModelShape {
        input_dim: n,
        hidden_widths,
        output_dim: rng.random_range(1..=n.max(2)),
        segments,
        groups: rng.random_range(2..=3),
        activation,
    };
    let mut model = init_params(&shape, rng.random()).unwrap();
    // Move away from the zero-bias, pivot-only initial state.
    let mut flat = model.to_flat();
    for v in flat.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    model.set_flat(&flat).unwrap();
    model.mlr.weights.column_mut(0).fill(0.0);
    model.mlr.biases[0] = 0.0;
    if activation == OutputActivation::Abs {
        model.features.slopes = DVector::from_element(shape.output_dim, -1.0);
    } else {
        model.features.slopes = DVector::from_fn(shape.output_dim, |_, _| rng.random_range(-1.5..0.5));
    }
    let batch = 6;
    loop {
        let x = DMatrix::from_fn(n, batch, |_, _| rng.random_range(-2.0..2.0));
        let cache = features_forward(&model.features, &x).unwrap();
        if cache.kink_margin(&model.features) > margin {
            let labels = (0..batch).map(|_| rng.random_range(0..segments)).collect();
            return GradientCase {
                model,
                x,
                labels,
                l2: rng.random_range(0.0..0.1),
            };
        }
    }
}

/// Largest relative error between backprop and finite differences.
pub fn max_gradient_error(case: &GradientCase) -> f64 {
    let (_, grad) = tcl_gradients(&case.model, &case.x, &case.labels, case.l2).unwrap();
    let fd = finite_difference_gradient(&case.model, &case.x, &case.labels, case.l2, 1e-6);
    grad.to_flat()
        .iter()
        .zip(&fd)
        .map(|(a, b)| relative_error(*a, *b))
        .fold(0.0, f64::max)
}
