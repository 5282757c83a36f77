//! Minibatch gradient descent with classic momentum on the segment
//! classification objective, plus the frozen-feature chance baseline.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::ObservationSeries;
use crate::error::{Result, TclError};
use crate::network::{self, features_forward, mlr_gradients, tcl_gradients, MlrHead, ModelShape, TclModel};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2_weight: f64,
    pub seed: u64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    /// Share of every segment (taken from its end) held out for accuracy.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 256,
            epochs: 100,
            l2_weight: 1e-4,
            seed: 0,
            lr_decay: 0.999,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(TclError::InvalidParameter(what));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.l2_weight >= 0.0) {
            return bad(format!("l2_weight must be >= 0, got {}", self.l2_weight));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad(format!(
                "holdout_fraction must lie in [0, 1), got {}",
                self.holdout_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    /// Full training-set objective before the first and after the last update.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Set when training ended above its starting objective.
    pub loss_increased: bool,
    pub heldout_accuracy: f64,
}

impl TrainHistory {
    /// CSV with header `epoch,loss,accuracy`, epochs numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,accuracy\n");
        for (e, (l, a)) in self.epoch_loss.iter().zip(&self.epoch_accuracy).enumerate() {
            out.push_str(&format!("{},{l:e},{a:e}\n", e + 1));
        }
        out
    }
}

/// Column indices of the training and held-out parts. The last
/// `ceil(fraction · seg_len)` samples of every segment are held out.
pub fn holdout_split(data: &ObservationSeries, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let held_per_segment = (fraction * data.seg_len as f64).ceil() as usize;
    let held_per_segment = held_per_segment.min(data.seg_len.saturating_sub(1));
    let mut train = Vec::with_capacity(data.len());
    let mut held = Vec::new();
    for t in 0..data.len() {
        if t % data.seg_len >= data.seg_len - held_per_segment {
            held.push(t);
        } else {
            train.push(t);
        }
    }
    (train, held)
}

/// Classic momentum: `v ← μ v − η g`, `θ ← θ + v`.
struct Momentum {
    velocity: Vec<Vec<f64>>,
    momentum: f64,
}

impl Momentum {
    fn new(shapes: &[&[f64]], momentum: f64) -> Self {
        Momentum {
            velocity: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            momentum,
        }
    }

    fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = self.momentum * *v - lr * g;
                *p += *v;
            }
        }
    }
}

impl MlrHead {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weights.as_slice(), self.biases.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weights.as_mut_slice(), self.biases.as_mut_slice()]
    }
}

fn gather(x: &DMatrix<f64>, labels: &[usize], idx: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
    (x.select_columns(idx), idx.iter().map(|&i| labels[i]).collect())
}

fn check_data(data: &ObservationSeries, train: &[usize], cfg: &TrainConfig, segments: usize) -> Result<()> {
    cfg.validate()?;
    if data.segments != segments {
        return Err(TclError::mismatch("training data segments", segments, data.segments));
    }
    if train.is_empty() {
        return Err(TclError::InvalidParameter("no training samples".into()));
    }
    if cfg.batch_size > train.len() {
        return Err(TclError::InvalidParameter(format!(
            "batch_size {} exceeds {} training samples",
            cfg.batch_size,
            train.len()
        )));
    }
    let mut seen = vec![false; segments];
    for &t in train {
        let l = data.labels[t];
        if l >= segments {
            return Err(TclError::LabelOutOfRange { label: l, segments });
        }
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(TclError::InvalidParameter(format!(
            "segment {missing} has no training samples"
        )));
    }
    Ok(())
}

fn non_finite(epoch: usize, lr: f64) -> TclError {
    TclError::NonFinite {
        what: format!("training loss at epoch {} (learning rate {lr:e} too high?)", epoch + 1),
    }
}

/// Trains feature extractor and MLR head jointly.
pub fn train_tcl(
    data: &ObservationSeries,
    mut model: TclModel,
    cfg: &TrainConfig,
) -> Result<(TclModel, TrainHistory)> {
    let (train, held) = holdout_split(data, cfg.holdout_fraction);
    check_data(data, &train, cfg, model.mlr.segments())?;
    let (train_x, train_labels) = gather(&data.values, &data.labels, &train);

    let initial_loss = network::tcl_loss(&model, &train_x, &train_labels, cfg.l2_weight)?;
    let mut rng = rng::seeded(cfg.seed);
    let mut opt = Momentum::new(&model.tensors(), cfg.momentum);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = cfg.learning_rate;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut epoch_accuracy = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = gather(&train_x, &train_labels, chunk);
            let (stats, grad) = tcl_gradients(&model, &x, &labels, cfg.l2_weight)?;
            if !stats.loss.is_finite() {
                return Err(non_finite(epoch, lr));
            }
            loss_sum += stats.loss * stats.size as f64;
            correct += stats.correct;
            if lr != 0.0 {
                opt.step(model.tensors_mut(), grad.tensors(), lr);
            }
        }
        epoch_loss.push(loss_sum / train.len() as f64);
        epoch_accuracy.push(correct as f64 / train.len() as f64);
        lr *= cfg.lr_decay;
    }

    let final_loss = network::tcl_loss(&model, &train_x, &train_labels, cfg.l2_weight)?;
    if !final_loss.is_finite() {
        return Err(non_finite(cfg.epochs.saturating_sub(1), lr));
    }
    let heldout_accuracy = accuracy_on(&model, data, &held)?;
    let history = TrainHistory {
        epoch_loss,
        epoch_accuracy,
        initial_loss,
        final_loss,
        loss_increased: final_loss > initial_loss,
        heldout_accuracy,
    };
    Ok((model, history))
}

fn accuracy_on(model: &TclModel, data: &ObservationSeries, cols: &[usize]) -> Result<f64> {
    if cols.is_empty() {
        return Ok(f64::NAN);
    }
    let (x, labels) = gather(&data.values, &data.labels, cols);
    classification_accuracy(model, &x, &labels)
}

/// Accuracy on the samples [`holdout_split`] holds out; NaN when none are.
pub fn heldout_accuracy(model: &TclModel, data: &ObservationSeries, fraction: f64) -> Result<f64> {
    let (_, held) = holdout_split(data, fraction);
    accuracy_on(model, data, &held)
}

/// Share of columns whose posterior argmax (ties to the lower class)
/// equals the label.
pub fn classification_accuracy(model: &TclModel, x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    if labels.len() != x.ncols() {
        return Err(TclError::mismatch("accuracy labels", x.ncols(), labels.len()));
    }
    if labels.is_empty() {
        return Ok(f64::NAN);
    }
    let h = features_forward(&model.features, x)?.features;
    let logits = model.mlr.logits(&h);
    let correct = logits
        .column_iter()
        .zip(labels)
        .filter(|(col, &l)| network::argmax_lowest(col.iter().copied()) == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Held-out accuracy of an MLR head trained on the outputs of a freshly
/// initialised, frozen feature extractor.
pub fn chance_level(data: &ObservationSeries, shape: &ModelShape, cfg: &TrainConfig) -> Result<f64> {
    let (train, held) = holdout_split(data, cfg.holdout_fraction);
    check_data(data, &train, cfg, shape.segments)?;
    let model = network::init_params(shape, rng::derive_seed(cfg.seed, "chance-init"))?;
    let h = features_forward(&model.features, &data.values)?.features;
    let (train_h, train_labels) = gather(&h, &data.labels, &train);
    let mut mlr = model.mlr;

    let mut rng = rng::seeded(rng::derive_seed(cfg.seed, "chance-shuffle"));
    let mut opt = Momentum::new(&mlr.tensors(), cfg.momentum);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = cfg.learning_rate;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (hb, lb) = gather(&train_h, &train_labels, chunk);
            let (stats, grad, _) = mlr_gradients(&hb, &lb, &mlr, cfg.l2_weight)?;
            if !stats.loss.is_finite() {
                return Err(non_finite(epoch, lr));
            }
            if lr != 0.0 {
                opt.step(mlr.tensors_mut(), grad.tensors(), lr);
            }
        }
        lr *= cfg.lr_decay;
    }
    let eval_cols = if held.is_empty() { &train } else { &held };
    let (eval_h, eval_labels) = gather(&h, &data.labels, eval_cols);
    let logits = mlr.logits(&eval_h);
    let correct = logits
        .column_iter()
        .zip(&eval_labels)
        .filter(|(col, &l)| network::argmax_lowest(col.iter().copied()) == l)
        .count();
    Ok(correct as f64 / eval_labels.len() as f64)
}
