//! Feature extractor (maxout hidden layers, absolute-value outputs), the
//! pivoted multinomial logistic regression head, and exact gradients of the
//! segment-classification loss.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TclError};
use crate::rng;

/// Activation applied to the feature extractor's output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    /// `|u|`, with subgradient 0 at `u = 0`.
    #[default]
    Abs,
    /// `max(u, a·u)` with one learnable `a` per unit, initialised at -1.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    /// `out × in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl AffineMap {
    fn zeros(out: usize, inp: usize) -> Self {
        AffineMap {
            weight: DMatrix::zeros(out, inp),
            bias: DVector::zeros(out),
        }
    }

    fn glorot(out: usize, inp: usize, rng: &mut rng::Rng) -> Self {
        let bound = glorot_bound(inp, out);
        AffineMap {
            weight: DMatrix::from_fn(out, inp, |_, _| rng.random_range(-bound..=bound)),
            bias: DVector::zeros(out),
        }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.weight * x;
        for mut col in z.column_iter_mut() {
            col += &self.bias;
        }
        z
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Hidden layer emitting the coordinate-wise max over `G` affine groups.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxoutLayer {
    pub groups: Vec<AffineMap>,
}

impl MaxoutLayer {
    pub fn width(&self) -> usize {
        self.groups[0].weight.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.groups[0].weight.ncols()
    }
}

/// `h(x; θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub hidden: Vec<MaxoutLayer>,
    pub output: AffineMap,
    pub activation: OutputActivation,
    /// Per-unit slope `a` of the adaptive activation. Held at -1 (and never
    /// trained) for [`OutputActivation::Abs`].
    pub slopes: DVector<f64>,
}

impl FeatureExtractor {
    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.output.weight.ncols(), MaxoutLayer::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.output.weight.nrows()
    }
}

/// MLR head with class 0 as the pivot: its weight column and bias stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MlrHead {
    /// `m × T`.
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
}

impl MlrHead {
    pub fn segments(&self) -> usize {
        self.weights.ncols()
    }

    /// Logits `Wᵀh + b`, `T × B`.
    pub fn logits(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = self.weights.tr_mul(h);
        for mut col in z.column_iter_mut() {
            col += &self.biases;
        }
        z
    }

    fn zero_pivot(&mut self) {
        self.weights.column_mut(0).fill(0.0);
        self.biases[0] = 0.0;
    }
}

/// Full trainable state. Also used as the container for gradients and
/// momentum buffers, which share the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TclModel {
    pub features: FeatureExtractor,
    pub mlr: MlrHead,
}

/// Architecture of a [`TclModel`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub segments: usize,
    pub groups: usize,
    pub activation: OutputActivation,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(TclError::InvalidParameter(
                "input and output dimensions must be positive".into(),
            ));
        }
        if self.hidden_widths.contains(&0) {
            return Err(TclError::InvalidParameter("hidden widths must be positive".into()));
        }
        if !self.hidden_widths.is_empty() && self.groups < 2 {
            return Err(TclError::InvalidParameter(format!(
                "maxout layers need at least 2 groups, got {}",
                self.groups
            )));
        }
        if self.segments < 2 {
            return Err(TclError::InvalidParameter(format!(
                "need at least 2 segments, got {}",
                self.segments
            )));
        }
        Ok(())
    }
}

impl TclModel {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            input_dim: self.features.input_dim(),
            hidden_widths: self.features.hidden.iter().map(MaxoutLayer::width).collect(),
            output_dim: self.features.output_dim(),
            segments: self.mlr.segments(),
            groups: self.features.hidden.first().map_or(2, |l| l.groups.len()),
            activation: self.features.activation,
        }
    }

    /// A model-shaped container of zeros.
    pub fn zeros_like(&self) -> TclModel {
        let hidden = self
            .features
            .hidden
            .iter()
            .map(|l| MaxoutLayer {
                groups: l
                    .groups
                    .iter()
                    .map(|g| AffineMap::zeros(g.weight.nrows(), g.weight.ncols()))
                    .collect(),
            })
            .collect();
        TclModel {
            features: FeatureExtractor {
                hidden,
                output: AffineMap::zeros(self.features.output_dim(), self.features.output.weight.ncols()),
                activation: self.features.activation,
                slopes: DVector::zeros(self.features.output_dim()),
            },
            mlr: MlrHead {
                weights: DMatrix::zeros(self.mlr.weights.nrows(), self.mlr.segments()),
                biases: DVector::zeros(self.mlr.segments()),
            },
        }
    }

    /// Every parameter tensor in canonical order: hidden layers (group by
    /// group, weight then bias), output weight, output bias, slopes, MLR
    /// weights, MLR biases.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.features.hidden {
            for g in &layer.groups {
                out.push(g.weight.as_slice());
                out.push(g.bias.as_slice());
            }
        }
        out.push(self.features.output.weight.as_slice());
        out.push(self.features.output.bias.as_slice());
        out.push(self.features.slopes.as_slice());
        out.push(self.mlr.weights.as_slice());
        out.push(self.mlr.biases.as_slice());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.features.hidden {
            for g in &mut layer.groups {
                out.push(g.weight.as_mut_slice());
                out.push(g.bias.as_mut_slice());
            }
        }
        out.push(self.features.output.weight.as_mut_slice());
        out.push(self.features.output.bias.as_mut_slice());
        out.push(self.features.slopes.as_mut_slice());
        out.push(self.mlr.weights.as_mut_slice());
        out.push(self.mlr.biases.as_mut_slice());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flattened copy of all parameters in [`TclModel::tensors`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let count = self.parameter_count();
        if flat.len() != count {
            return Err(TclError::mismatch("parameter vector", count, flat.len()));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// Sum of squared weights (biases and slopes excluded).
    pub fn weight_penalty(&self) -> f64 {
        let mut total = 0.0;
        for layer in &self.features.hidden {
            for g in &layer.groups {
                total += g.weight.norm_squared();
            }
        }
        total + self.features.output.weight.norm_squared() + self.mlr.weights.norm_squared()
    }
}

/// Glorot-uniform weights, zero biases, pivot column zeroed.
pub fn init_params(shape: &ModelShape, seed: u64) -> Result<TclModel> {
    shape.validate()?;
    let mut rng = rng::seeded(seed);
    let mut hidden = Vec::with_capacity(shape.hidden_widths.len());
    let mut fan_in = shape.input_dim;
    for &width in &shape.hidden_widths {
        let groups = (0..shape.groups)
            .map(|_| AffineMap::glorot(width, fan_in, &mut rng))
            .collect();
        hidden.push(MaxoutLayer { groups });
        fan_in = width;
    }
    let output = AffineMap::glorot(shape.output_dim, fan_in, &mut rng);
    let bound = glorot_bound(shape.output_dim, shape.segments);
    let mut mlr = MlrHead {
        weights: DMatrix::from_fn(shape.output_dim, shape.segments, |_, _| {
            rng.random_range(-bound..=bound)
        }),
        biases: DVector::zeros(shape.segments),
    };
    mlr.zero_pivot();
    Ok(TclModel {
        features: FeatureExtractor {
            hidden,
            output,
            activation: shape.activation,
            slopes: DVector::from_element(shape.output_dim, -1.0),
        },
        mlr,
    })
}

/// Intermediate values retained by [`features_forward`] for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each hidden layer.
    layer_inputs: Vec<DMatrix<f64>>,
    /// Winning group per hidden unit and sample.
    argmax: Vec<Vec<u8>>,
    /// Input to the output layer.
    output_input: DMatrix<f64>,
    /// Output pre-activations `u`.
    pub pre_activation: DMatrix<f64>,
    /// Features `h`, `m × B`.
    pub features: DMatrix<f64>,
}

impl ForwardCache {
    /// Smallest distance of any pre-activation to a kink of its
    /// activation (maxout ties and the output nonlinearity's break point).
    pub fn kink_margin(&self, fe: &FeatureExtractor) -> f64 {
        let mut margin = f64::INFINITY;
        for (layer, x) in fe.hidden.iter().zip(&self.layer_inputs) {
            let zs: Vec<DMatrix<f64>> = layer.groups.iter().map(|g| g.apply(x)).collect();
            for idx in 0..zs[0].len() {
                let mut vals: Vec<f64> = zs.iter().map(|z| z[idx]).collect();
                vals.sort_by(|a, b| b.total_cmp(a));
                margin = margin.min(vals[0] - vals[1]);
            }
        }
        for &u in self.pre_activation.iter() {
            margin = margin.min(u.abs());
        }
        margin
    }
}

#[inline]
fn output_act(u: f64, activation: OutputActivation, slope: f64) -> f64 {
    match activation {
        OutputActivation::Abs => u.abs(),
        OutputActivation::Adaptive => u.max(slope * u),
    }
}

/// Evaluates `h(x; θ)` for the columns of `x`.
pub fn features_forward(fe: &FeatureExtractor, x: &DMatrix<f64>) -> Result<ForwardCache> {
    if x.nrows() != fe.input_dim() {
        return Err(TclError::mismatch("features_forward", fe.input_dim(), x.nrows()));
    }
    let mut layer_inputs = Vec::with_capacity(fe.hidden.len());
    let mut argmax = Vec::with_capacity(fe.hidden.len());
    let mut current = x.clone();
    for layer in &fe.hidden {
        let mut best = layer.groups[0].apply(&current);
        let mut winner = vec![0u8; best.len()];
        for (g, group) in layer.groups.iter().enumerate().skip(1) {
            let z = group.apply(&current);
            for (idx, (&v, b)) in z.iter().zip(best.iter_mut()).enumerate() {
                // Strict comparison: ties stay with the lowest group index.
                if v > *b {
                    *b = v;
                    winner[idx] = g as u8;
                }
            }
        }
        layer_inputs.push(std::mem::replace(&mut current, best));
        argmax.push(winner);
    }
    let pre = fe.output.apply(&current);
    let mut h = pre.clone();
    for (r, mut row) in h.row_iter_mut().enumerate() {
        let a = fe.slopes[r];
        row.apply(|u| *u = output_act(*u, fe.activation, a));
    }
    Ok(ForwardCache {
        layer_inputs,
        argmax,
        output_input: current,
        pre_activation: pre,
        features: h,
    })
}

/// Class posteriors (softmax over pivoted logits), `T × B`. The max logit is
/// subtracted before exponentiation.
pub fn posterior_from_logits(logits: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(TclError::NonFinite {
            what: "MLR logits".into(),
        });
    }
    let mut p = logits.clone();
    for mut col in p.column_iter_mut() {
        let max = col.max();
        col.apply(|v| *v = (*v - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    Ok(p)
}

/// Posterior over segments for each column of `h`.
pub fn mlr_posterior(h: &DMatrix<f64>, mlr: &MlrHead) -> Result<DMatrix<f64>> {
    if h.nrows() != mlr.weights.nrows() {
        return Err(TclError::mismatch("mlr_posterior", mlr.weights.nrows(), h.nrows()));
    }
    posterior_from_logits(&mlr.logits(h))
}

fn check_labels(labels: &[usize], batch: usize, segments: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(TclError::mismatch("labels", batch, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= segments) {
        return Err(TclError::LabelOutOfRange {
            label: bad,
            segments,
        });
    }
    Ok(())
}

/// Mean negative log posterior of the true labels. Returns
/// `(summed NLL, correct predictions)` before averaging so callers can
/// aggregate across batches.
fn nll_terms(logits: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut correct = 0;
    for (col, &label) in logits.column_iter().zip(labels) {
        let max = col.max();
        if !max.is_finite() {
            return Err(TclError::NonFinite {
                what: "MLR logits".into(),
            });
        }
        let lse = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - col[label];
        if argmax_lowest(col.iter().copied()) == label {
            correct += 1;
        }
    }
    Ok((total, correct))
}

/// Index of the maximum, ties resolved toward the lowest index.
pub(crate) fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    for (i, v) in values.enumerate() {
        if v > best {
            best = v;
            idx = i;
        }
    }
    idx
}

/// Objective value plus classification count on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub correct: usize,
    pub size: usize,
}

/// Segment-classification loss: mean NLL plus `l2_weight` times the sum of
/// squared weights.
pub fn tcl_loss(model: &TclModel, x: &DMatrix<f64>, labels: &[usize], l2_weight: f64) -> Result<f64> {
    check_labels(labels, x.ncols(), model.mlr.segments())?;
    let cache = features_forward(&model.features, x)?;
    let logits = model.mlr.logits(&cache.features);
    let (nll, _) = nll_terms(&logits, labels)?;
    let mean = if labels.is_empty() { 0.0 } else { nll / labels.len() as f64 };
    Ok(mean + l2_weight * model.weight_penalty())
}

/// Loss and gradients of the MLR head given fixed features `h`. Also
/// returns `∂loss/∂h` (data term only).
pub fn mlr_gradients(
    h: &DMatrix<f64>,
    labels: &[usize],
    mlr: &MlrHead,
    l2_weight: f64,
) -> Result<(BatchStats, MlrHead, DMatrix<f64>)> {
    if h.nrows() != mlr.weights.nrows() {
        return Err(TclError::mismatch("mlr_gradients", mlr.weights.nrows(), h.nrows()));
    }
    check_labels(labels, h.ncols(), mlr.segments())?;
    let batch = labels.len();
    let logits = mlr.logits(h);
    let (nll, correct) = nll_terms(&logits, labels)?;
    let mut residual = posterior_from_logits(&logits)?;
    for (mut col, &label) in residual.column_iter_mut().zip(labels) {
        col[label] -= 1.0;
    }
    if batch > 0 {
        residual /= batch as f64;
    }
    let mut grad = MlrHead {
        weights: h * residual.transpose() + &mlr.weights * (2.0 * l2_weight),
        biases: residual.column_sum(),
    };
    grad.zero_pivot();
    let dh = &mlr.weights * &residual;
    let data_loss = if batch > 0 { nll / batch as f64 } else { 0.0 };
    let stats = BatchStats {
        loss: data_loss + l2_weight * mlr.weights.norm_squared(),
        correct,
        size: batch,
    };
    Ok((stats, grad, dh))
}

/// Exact gradient of [`tcl_loss`] with respect to every parameter.
pub fn tcl_gradients(
    model: &TclModel,
    x: &DMatrix<f64>,
    labels: &[usize],
    l2_weight: f64,
) -> Result<(BatchStats, TclModel)> {
    let fe = &model.features;
    let cache = features_forward(fe, x)?;
    let (mut stats, mlr_grad, dh) = mlr_gradients(&cache.features, labels, &model.mlr, l2_weight)?;

    let mut grad = model.zeros_like();
    grad.mlr = mlr_grad;

    // Output activation.
    let mut du = dh;
    for r in 0..du.nrows() {
        let a = fe.slopes[r];
        for c in 0..du.ncols() {
            let u = cache.pre_activation[(r, c)];
            let g = du[(r, c)];
            let d = match fe.activation {
                OutputActivation::Abs => {
                    if u > 0.0 {
                        1.0
                    } else if u < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                OutputActivation::Adaptive => {
                    if u > a * u {
                        1.0
                    } else if a * u > u {
                        grad.features.slopes[r] += g * u;
                        a
                    } else {
                        0.0
                    }
                }
            };
            du[(r, c)] = g * d;
        }
    }
    grad.features.output.weight =
        &du * cache.output_input.transpose() + &fe.output.weight * (2.0 * l2_weight);
    grad.features.output.bias = du.column_sum();
    let mut upstream = fe.output.weight.tr_mul(&du);

    for (k, layer) in fe.hidden.iter().enumerate().rev() {
        let input = &cache.layer_inputs[k];
        let winner = &cache.argmax[k];
        let mut next = DMatrix::zeros(input.nrows(), input.ncols());
        for (g, group) in layer.groups.iter().enumerate() {
            let mut dz = upstream.clone();
            for (v, &w) in dz.iter_mut().zip(winner) {
                if w as usize != g {
                    *v = 0.0;
                }
            }
            let target = &mut grad.features.hidden[k].groups[g];
            target.weight = &dz * input.transpose() + &group.weight * (2.0 * l2_weight);
            target.bias = dz.column_sum();
            next += group.weight.tr_mul(&dz);
        }
        upstream = next;
    }

    let mut feature_penalty = fe.output.weight.norm_squared();
    for layer in &fe.hidden {
        for g in &layer.groups {
            feature_penalty += g.weight.norm_squared();
        }
    }
    stats.loss += l2_weight * feature_penalty;
    Ok((stats, grad))
}
