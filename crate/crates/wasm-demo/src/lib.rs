//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Matrices cross the boundary as flat `Float64Array`s in column-major
//! order: sample `t` of an `n`-dimensional signal occupies `[t*n, (t+1)*n)`.

use tcl_core::datagen::invert_mixing;
use tcl_core::experiment::{
    evaluate_nsvica, evaluate_tcl, generate_data, run_tcl, truth_for, ExperimentConfig, GeneratedData, Method,
    PipelinePoint, TclScores,
};
use tcl_core::linear_ica::nsvica;
use tcl_core::trainer::TrainConfig;
use tcl_core::TclError;
use wasm_bindgen::prelude::*;

fn js(e: TclError) -> JsError {
    JsError::new(&e.to_string())
}

fn demo_config(n: usize, seg_len: usize) -> ExperimentConfig {
    ExperimentConfig {
        n,
        seg_len,
        ..ExperimentConfig::default()
    }
}

/// Sources, modulations and mixed observations for one setting.
#[wasm_bindgen]
pub struct Dataset {
    data: GeneratedData,
    seed: u64,
}

#[wasm_bindgen]
impl Dataset {
    /// Samples modulated Laplacian sources and pushes them through a
    /// random invertible leaky-ReLU network of the given depth.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, depth: usize, segments: usize, seg_len: usize, seed: u64) -> Result<Dataset, JsError> {
        let cfg = demo_config(n, seg_len);
        let data = generate_data(&cfg, depth, segments, seed).map_err(js)?;
        Ok(Dataset { data, seed })
    }

    pub fn dim(&self) -> usize {
        self.data.dataset.header.n
    }

    pub fn samples(&self) -> usize {
        self.data.dataset.observations.len()
    }

    pub fn segments(&self) -> usize {
        self.data.dataset.header.segments
    }

    pub fn depth(&self) -> usize {
        self.data.dataset.header.depth
    }

    pub fn sources(&self) -> Vec<f64> {
        self.data.dataset.sources.values.as_slice().to_vec()
    }

    pub fn observations(&self) -> Vec<f64> {
        self.data.dataset.observations.values.as_slice().to_vec()
    }

    /// Row-major `segments × n` modulation values.
    pub fn lambdas(&self) -> Vec<f64> {
        self.data.dataset.modulations.lambdas.transpose().as_slice().to_vec()
    }

    /// Largest absolute deviation after inverting the mixing network.
    pub fn roundtrip_error(&self) -> Result<f64, JsError> {
        let ds = &self.data.dataset;
        let back = invert_mixing(&self.data.mixing, &ds.observations.values).map_err(js)?;
        Ok((back - &ds.sources.values).amax())
    }

    /// Recovers the sources with `"tcl"` (training `epochs` passes) or
    /// `"nsvica"`.
    pub fn separate(&self, method: &str, epochs: usize) -> Result<Separation, JsError> {
        let method: Method = method.parse().map_err(js)?;
        let ds = &self.data.dataset;
        let mut cfg = demo_config(ds.header.n, ds.header.seg_len);
        cfg.train = TrainConfig {
            epochs,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let point = PipelinePoint {
            depth: ds.header.depth,
            segments: ds.header.segments,
            seed: self.seed,
            method,
        };
        let truth = truth_for(ds);
        let (report, estimates, loss_curve) = match method {
            Method::Tcl => {
                let out = run_tcl(&cfg, &point, ds).map_err(js)?;
                let scores = TclScores {
                    accuracy: out.history.heldout_accuracy,
                    chance: out.chance,
                    loss_increased: out.history.loss_increased,
                };
                let report = evaluate_tcl(&point, ds, &out.features, &out.ica, scores).map_err(js)?;
                (report, out.ica.components, out.history.epoch_loss)
            }
            Method::Nsvica => {
                let res = nsvica(&ds.observations.values, &ds.observations.labels).map_err(js)?;
                let report = evaluate_nsvica(&point, ds, &res).map_err(js)?;
                (report, res.components.abs(), Vec::new())
            }
        };
        // Reorder and sign-align estimates with the truth for plotting.
        let mut aligned = truth.clone();
        for &(i, j) in &report.assignment {
            let row = estimates.row(j);
            let mean = row.mean();
            let sd = row.variance().sqrt().max(f64::MIN_POSITIVE);
            let corr: f64 = truth.row(i).iter().zip(row.iter()).map(|(a, b)| a * (b - mean)).sum();
            let sign = if corr < 0.0 { -1.0 } else { 1.0 };
            aligned.set_row(i, &row.map(|v| sign * (v - mean) / sd));
        }
        Ok(Separation {
            mean_abs_corr: report.mean_abs_corr,
            per_component: report.per_component_corr,
            accuracy: report.classification_accuracy.unwrap_or(f64::NAN),
            chance: report.chance_level.unwrap_or(f64::NAN),
            truth: truth.as_slice().to_vec(),
            estimates: aligned.as_slice().to_vec(),
            loss_curve,
        })
    }
}

/// Outcome of one separation run.
#[wasm_bindgen]
pub struct Separation {
    mean_abs_corr: f64,
    per_component: Vec<f64>,
    accuracy: f64,
    chance: f64,
    truth: Vec<f64>,
    estimates: Vec<f64>,
    loss_curve: Vec<f64>,
}

#[wasm_bindgen]
impl Separation {
    pub fn mean_abs_corr(&self) -> f64 {
        self.mean_abs_corr
    }

    pub fn per_component(&self) -> Vec<f64> {
        self.per_component.clone()
    }

    /// Held-out segment accuracy; NaN for nsvica.
    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn chance(&self) -> f64 {
        self.chance
    }

    /// Standardized `q(s)`, column-major.
    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }

    /// Estimates matched, sign-aligned and standardized against `truth`.
    pub fn estimates(&self) -> Vec<f64> {
        self.estimates.clone()
    }

    pub fn loss_curve(&self) -> Vec<f64> {
        self.loss_curve.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_shapes_and_inversion() {
        let d = Dataset::new(2, 2, 4, 50, 1).ok().unwrap();
        assert_eq!(d.samples(), 200);
        assert_eq!(d.sources().len(), 400);
        assert_eq!(d.lambdas().len(), 8);
        assert!(d.roundtrip_error().ok().unwrap() < 1e-9);
    }

    #[test]
    fn separation_outputs_align() {
        let d = Dataset::new(2, 1, 6, 200, 2).ok().unwrap();
        let s = d.separate("nsvica", 0).ok().unwrap();
        assert_eq!(s.truth().len(), s.estimates().len());
        assert!(s.mean_abs_corr() > 0.8);
        assert!(s.accuracy().is_nan());
        let t = d.separate("tcl", 5).ok().unwrap();
        assert_eq!(t.loss_curve().len(), 5);
        assert!(t.accuracy() > 0.0);
    }
}
