//! Full pipelines and sweeps: generate, train, unmix, evaluate.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    apply_mixing, build_mixing, sample_modulations, sample_sources, MixingNetwork, SourceFamily,
};
use crate::error::{Result, TclError};
use crate::evaluation::{match_components, theorem1_check, true_q_values, EvalReport};
use crate::io::{self, DatasetHeader, DatasetSeeds, StoredDataset};
use crate::linear_ica::{fastica, nsvica, FastIcaConfig, IcaResult};
use crate::network::{features_forward, init_params, ModelShape, OutputActivation, TclModel};
use crate::rng::derive_seed;
use crate::trainer::{chance_level, train_tcl, TrainConfig, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tcl,
    Nsvica,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tcl => "tcl",
            Method::Nsvica => "nsvica",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = TclError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tcl" => Ok(Method::Tcl),
            "nsvica" => Ok(Method::Nsvica),
            other => Err(TclError::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n: usize,
    pub seg_len: usize,
    pub depths: Vec<usize>,
    pub segment_counts: Vec<usize>,
    pub repeats: usize,
    pub family: SourceFamily,
    /// Trailing components kept stationary; TCL then extracts `n - stationary_count` features.
    pub stationary_count: usize,
    pub lambda_min: f64,
    pub leaky_slope: f64,
    pub cond_bound: f64,
    /// Width of every hidden maxout layer; defaults to `2n`.
    pub hidden_width: Option<usize>,
    pub groups: usize,
    pub activation: OutputActivation,
    pub train: TrainConfig,
    pub ica: FastIcaConfig,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 5,
            seg_len: 512,
            depths: vec![1, 2],
            segment_counts: vec![8, 32, 128],
            repeats: 5,
            family: SourceFamily::Laplacian,
            stationary_count: 0,
            lambda_min: 0.1,
            leaky_slope: 0.2,
            cond_bound: 1e4,
            hidden_width: None,
            groups: 2,
            activation: OutputActivation::Abs,
            train: TrainConfig::default(),
            ica: FastIcaConfig::default(),
            methods: vec![Method::Tcl, Method::Nsvica],
            seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(TclError::InvalidParameter(msg));
        if self.n == 0 || self.seg_len == 0 {
            return invalid("n and seg_len must be positive".into());
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return invalid("depths must be a non-empty list of positive values".into());
        }
        if self.segment_counts.is_empty() || self.segment_counts.iter().any(|&t| t < 2) {
            return invalid("segment_counts must be a non-empty list of values >= 2".into());
        }
        if self.repeats == 0 {
            return invalid("repeats must be at least 1".into());
        }
        if self.methods.is_empty() {
            return invalid("methods must not be empty".into());
        }
        if self.stationary_count >= self.n {
            return invalid(format!(
                "stationary_count {} leaves no nonstationary component of {}",
                self.stationary_count, self.n
            ));
        }
        if self.groups == 0 || self.hidden_width == Some(0) {
            return invalid("groups and hidden_width must be positive".into());
        }
        self.train.validate()
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width.unwrap_or(2 * self.n)
    }

    /// Feature extractor with as many layers as the mixing network.
    pub fn model_shape(&self, depth: usize, segments: usize) -> ModelShape {
        ModelShape {
            input_dim: self.n,
            hidden_widths: vec![self.hidden_width(); depth.saturating_sub(1)],
            output_dim: self.n - self.stationary_count,
            segments,
            groups: self.groups,
            activation: self.activation,
        }
    }

    /// Every `(depth, segments, seed, method)` cell, in a fixed order.
    pub fn points(&self) -> Vec<PipelinePoint> {
        let mut out = Vec::new();
        for &depth in &self.depths {
            for &segments in &self.segment_counts {
                for r in 0..self.repeats {
                    for &method in &self.methods {
                        out.push(PipelinePoint {
                            depth,
                            segments,
                            seed: self.seed + r as u64,
                            method,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PipelinePoint {
    pub depth: usize,
    pub segments: usize,
    pub seed: u64,
    pub method: Method,
}

impl PipelinePoint {
    pub fn dir_name(&self) -> String {
        format!("d{}_t{}_s{}_{}", self.depth, self.segments, self.seed, self.method)
    }
}

/// Seeds for one dataset; methods sharing `(depth, segments, seed)` see the same data.
pub fn dataset_seeds(depth: usize, segments: usize, seed: u64) -> DatasetSeeds {
    let tag = |what: &str| derive_seed(seed, &format!("{what}-d{depth}-t{segments}"));
    DatasetSeeds {
        modulation: tag("modulation"),
        sources: tag("sources"),
        mixing: tag("mixing"),
    }
}

/// Generated data plus the mixing network that produced it.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub dataset: StoredDataset,
    pub mixing: MixingNetwork,
}

/// Modulations, standardized sources and mixed observations for one grid point.
pub fn generate_data(cfg: &ExperimentConfig, depth: usize, segments: usize, seed: u64) -> Result<GeneratedData> {
    let seeds = dataset_seeds(depth, segments, seed);
    let mods = sample_modulations(cfg.n, segments, cfg.lambda_min, seeds.modulation)?;
    let mut sources = sample_sources(&mods, cfg.family, cfg.seg_len, cfg.stationary_count, seeds.sources)?;
    sources.standardize();
    let mixing = build_mixing(cfg.n, depth, cfg.leaky_slope, cfg.cond_bound, seeds.mixing)?;
    let observations = apply_mixing(&mixing, &sources)?;
    let header = DatasetHeader {
        format_version: io::FORMAT_VERSION,
        n: cfg.n,
        segments,
        seg_len: cfg.seg_len,
        depth,
        family: cfg.family,
        stationary_count: cfg.stationary_count,
        lambda_min: cfg.lambda_min,
        leaky_slope: cfg.leaky_slope,
        seeds,
        layout: "column-major, one sample per column".into(),
    };
    Ok(GeneratedData {
        dataset: StoredDataset {
            header,
            modulations: mods,
            sources,
            observations,
        },
        mixing,
    })
}

/// Standardized `q(s)` of the nonstationary components.
pub fn truth_for(ds: &StoredDataset) -> DMatrix<f64> {
    let m = ds.header.n - ds.header.stationary_count;
    true_q_values(&ds.sources.values.rows(0, m).into_owned(), ds.header.family)
}

/// Training seeds derived from the pipeline seed.
pub fn model_seeds(cfg: &ExperimentConfig, point: &PipelinePoint) -> (u64, u64) {
    let tag = format!("d{}-t{}", point.depth, point.segments);
    (
        derive_seed(point.seed, &format!("init-{tag}")),
        derive_seed(point.seed ^ cfg.train.seed, &format!("train-{tag}")),
    )
}

/// Training configuration with the derived shuffle seed.
pub fn train_config(cfg: &ExperimentConfig, point: &PipelinePoint) -> TrainConfig {
    TrainConfig {
        seed: model_seeds(cfg, point).1,
        ..cfg.train.clone()
    }
}

pub fn ica_config(cfg: &ExperimentConfig, point: &PipelinePoint) -> FastIcaConfig {
    FastIcaConfig {
        seed: derive_seed(point.seed ^ cfg.ica.seed, &format!("ica-d{}-t{}", point.depth, point.segments)),
        ..cfg.ica.clone()
    }
}

/// Result of a trained TCL model on a dataset.
#[derive(Debug, Clone)]
pub struct TclOutcome {
    pub model: TclModel,
    pub history: TrainHistory,
    pub chance: f64,
    pub features: DMatrix<f64>,
    pub ica: IcaResult,
    pub init_seed: u64,
    pub train_seed: u64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    pub tcl: Option<TclOutcome>,
    pub nsvica: Option<IcaResult>,
}

/// Trains TCL on the dataset, extracts features from all samples and
/// runs FastICA on them.
pub fn run_tcl(cfg: &ExperimentConfig, point: &PipelinePoint, ds: &StoredDataset) -> Result<TclOutcome> {
    let shape = cfg.model_shape(point.depth, point.segments);
    let (init_seed, train_seed) = model_seeds(cfg, point);
    let train_cfg = train_config(cfg, point);
    let model = init_params(&shape, init_seed).map_err(|e| e.in_stage("train"))?;
    let (model, history) = train_tcl(&ds.observations, model, &train_cfg).map_err(|e| e.in_stage("train"))?;
    let chance = chance_level(&ds.observations, &shape, &train_cfg).map_err(|e| e.in_stage("chance"))?;
    let features = features_forward(&model.features, &ds.observations.values)
        .map_err(|e| e.in_stage("features"))?
        .features;
    let ica = fastica(&features, &ica_config(cfg, point)).map_err(|e| e.in_stage("ica"))?;
    Ok(TclOutcome {
        model,
        history,
        chance,
        features,
        ica,
        init_seed,
        train_seed,
    })
}

/// Held-out accuracy, chance level and training status of a TCL run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TclScores {
    pub accuracy: f64,
    pub chance: f64,
    pub loss_increased: bool,
}

/// Builds the report for TCL output from the learned features and their
/// linear ICA.
pub fn evaluate_tcl(
    point: &PipelinePoint,
    ds: &StoredDataset,
    features: &DMatrix<f64>,
    ica: &IcaResult,
    scores: TclScores,
) -> Result<EvalReport> {
    let truth = truth_for(ds);
    let matched = match_components(&truth, &ica.components).map_err(|e| e.in_stage("evaluate"))?;
    let mut warnings = matched.warnings.clone();
    let (r2, cond) = match theorem1_check(&truth, features) {
        Ok(fit) => (Some(fit.r2.as_slice().to_vec()), Some(fit.condition_number)),
        Err(e) => {
            warnings.push(format!("affine check skipped: {e}"));
            (None, None)
        }
    };
    if scores.loss_increased {
        warnings.push("training loss increased".into());
    }
    if ica.weak_signal {
        warnings.push("linear ica: weak non-gaussianity".into());
    }
    Ok(EvalReport {
        method: point.method.name().into(),
        depth: point.depth,
        segments: point.segments,
        seed: point.seed,
        mean_abs_corr: matched.mean_abs_corr,
        per_component_corr: matched.per_component,
        assignment: matched.assignment,
        classification_accuracy: Some(scores.accuracy),
        chance_level: Some(scores.chance),
        theorem1_r2: r2,
        theorem1_condition: cond,
        ica_converged: ica.converged,
        warnings,
    })
}

/// Builds the report for NSVICA output; the estimates are compared in
/// absolute value.
pub fn evaluate_nsvica(point: &PipelinePoint, ds: &StoredDataset, res: &IcaResult) -> Result<EvalReport> {
    let truth = truth_for(ds);
    let est = res.components.abs();
    let matched = match_components(&truth, &est).map_err(|e| e.in_stage("evaluate"))?;
    let mut warnings = matched.warnings.clone();
    if res.weak_signal {
        warnings.push("linear ica: weak covariance nonstationarity".into());
    }
    Ok(EvalReport {
        method: point.method.name().into(),
        depth: point.depth,
        segments: point.segments,
        seed: point.seed,
        mean_abs_corr: matched.mean_abs_corr,
        per_component_corr: matched.per_component,
        assignment: matched.assignment,
        classification_accuracy: None,
        chance_level: None,
        theorem1_r2: None,
        theorem1_condition: None,
        ica_converged: res.converged,
        warnings,
    })
}

/// Runs one grid point in memory. Errors name the failing stage.
pub fn run_pipeline(cfg: &ExperimentConfig, point: &PipelinePoint) -> Result<PipelineOutcome> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let data = generate_data(cfg, point.depth, point.segments, point.seed).map_err(|e| e.in_stage("generate"))?;
    let ds = &data.dataset;
    match point.method {
        Method::Tcl => {
            let out = run_tcl(cfg, point, ds)?;
            let scores = TclScores {
                accuracy: out.history.heldout_accuracy,
                chance: out.chance,
                loss_increased: out.history.loss_increased,
            };
            let report = evaluate_tcl(point, ds, &out.features, &out.ica, scores)?;
            Ok(PipelineOutcome {
                report,
                tcl: Some(out),
                nsvica: None,
            })
        }
        Method::Nsvica => {
            let res = nsvica(&ds.observations.values, &ds.observations.labels).map_err(|e| e.in_stage("ica"))?;
            let report = evaluate_nsvica(point, ds, &res)?;
            Ok(PipelineOutcome {
                report,
                tcl: None,
                nsvica: Some(res),
            })
        }
    }
}

pub const REPORT_FILE: &str = "report.json";

/// Runs one grid point and persists it under `root/<cell>/` atomically:
/// everything is written to a temp directory which is then renamed.
pub fn run_cell(cfg: &ExperimentConfig, point: &PipelinePoint, root: &Path) -> Result<EvalReport> {
    let outcome = run_pipeline(cfg, point)?;
    let final_dir = root.join(point.dir_name());
    let tmp = io::temp_sibling(&final_dir);
    let persist = || -> Result<()> {
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| TclError::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| TclError::io(&tmp, e))?;
        io::write_json(&tmp.join("config.json"), cfg)?;
        io::write_json(&tmp.join("point.json"), point)?;
        if let Some(t) = &outcome.tcl {
            io::write_checkpoint(&tmp.join("checkpoint"), &t.model, t.init_seed, t.train_seed)?;
            let csv = tmp.join("train.csv");
            fs::write(&csv, t.history.to_csv()).map_err(|e| TclError::io(&csv, e))?;
        }
        io::write_json(&tmp.join(REPORT_FILE), &outcome.report)?;
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir).map_err(|e| TclError::io(&final_dir, e))?;
        }
        fs::rename(&tmp, &final_dir).map_err(|e| TclError::io(&final_dir, e))
    };
    persist().map_err(|e| e.in_stage("persist"))?;
    Ok(outcome.report)
}

/// One row of the aggregate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub depth: usize,
    pub segments: usize,
    pub seed: u64,
    pub mean_abs_corr: f64,
    pub accuracy: Option<f64>,
    pub chance: Option<f64>,
    pub method: Method,
}

pub const CSV_HEADER: &str = "depth,segments,seed,mean_abs_corr,accuracy,chance,method";

impl ResultRow {
    pub fn from_report(r: &EvalReport) -> Result<Self> {
        Ok(ResultRow {
            depth: r.depth,
            segments: r.segments,
            seed: r.seed,
            mean_abs_corr: r.mean_abs_corr,
            accuracy: r.classification_accuracy,
            chance: r.chance_level,
            method: r.method.parse()?,
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> TclError {
    TclError::Format {
        path: path.into(),
        reason: e.to_string(),
    }
}

pub fn results_to_csv(rows: &[ResultRow]) -> Result<String> {
    let here = Path::new("<results csv>");
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(here, e))?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(',')).map_err(|e| csv_error(here, e))?;
    }
    let bytes = w.into_inner().map_err(|e| csv_error(here, e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn parse_results(text: &str, path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(TclError::Format {
            path: path.into(),
            reason: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    parse_results(text, Path::new("<results csv>"))
}

pub fn load_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| TclError::io(path, e))?;
    parse_results(&text, path)
}

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        };
        Some(MeanSe { mean, se })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub depth: usize,
    pub segments: usize,
    pub method: Method,
    pub runs: usize,
    pub mean_abs_corr: MeanSe,
    pub accuracy: Option<MeanSe>,
    pub chance: Option<MeanSe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub point: PipelinePoint,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: Vec<CellSummary>,
    pub failures: Vec<CellFailure>,
    pub completed: usize,
    pub skipped: usize,
}

impl SweepSummary {
    pub fn cell(&self, depth: usize, segments: usize, method: Method) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.depth == depth && c.segments == segments && c.method == method)
    }
}

/// Groups rows by `(depth, segments, method)`; NaN accuracies are dropped.
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(usize, usize, Method), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.depth, r.segments, r.method)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((depth, segments, method), rs)| {
            let corr: Vec<f64> = rs.iter().map(|r| r.mean_abs_corr).collect();
            let finite = |f: fn(&ResultRow) -> Option<f64>| -> Vec<f64> {
                rs.iter().filter_map(|r| f(r)).filter(|v| v.is_finite()).collect()
            };
            CellSummary {
                depth,
                segments,
                method,
                runs: rs.len(),
                mean_abs_corr: MeanSe::of(&corr).expect("non-empty group"),
                accuracy: MeanSe::of(&finite(|r| r.accuracy)),
                chance: MeanSe::of(&finite(|r| r.chance)),
            }
        })
        .collect()
}

/// Worker count from `TCL_WORKERS`, defaulting to the available parallelism.
pub const WORKERS_ENV: &str = "TCL_WORKERS";

pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

enum CellResult {
    Done(EvalReport),
    Skipped(EvalReport),
    Failed(CellFailure),
}

fn sweep_cell(cfg: &ExperimentConfig, point: &PipelinePoint, root: &Path) -> CellResult {
    let existing = root.join(point.dir_name()).join(REPORT_FILE);
    if existing.exists() {
        if let Ok(report) = io::read_json::<EvalReport>(&existing) {
            return CellResult::Skipped(report);
        }
    }
    match run_cell(cfg, point, root) {
        Ok(r) => CellResult::Done(r),
        Err(e) => CellResult::Failed(CellFailure {
            point: *point,
            error: e.to_string(),
        }),
    }
}

#[cfg(feature = "parallel")]
fn run_cells(cfg: &ExperimentConfig, points: &[PipelinePoint], root: &Path) -> Result<Vec<CellResult>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| TclError::InvalidParameter(format!("worker pool: {e}")))?;
    Ok(pool.install(|| points.par_iter().map(|p| sweep_cell(cfg, p, root)).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_cells(cfg: &ExperimentConfig, points: &[PipelinePoint], root: &Path) -> Result<Vec<CellResult>> {
    Ok(points.iter().map(|p| sweep_cell(cfg, p, root)).collect())
}

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Runs every grid cell under `cfg.output_dir`, skipping cells that
/// already hold a report, then writes `results.csv` and `summary.json`.
/// Failed cells are listed in the summary and do not stop the sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepSummary> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let root = &cfg.output_dir;
    fs::create_dir_all(root).map_err(|e| TclError::io(root, e))?;
    let points = cfg.points();
    let results = run_cells(cfg, &points, root)?;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let (mut completed, mut skipped) = (0, 0);
    for r in results {
        match r {
            CellResult::Done(rep) => {
                completed += 1;
                rows.push(ResultRow::from_report(&rep)?);
            }
            CellResult::Skipped(rep) => {
                skipped += 1;
                rows.push(ResultRow::from_report(&rep)?);
            }
            CellResult::Failed(f) => failures.push(f),
        }
    }
    let summary = SweepSummary {
        cells: summarize(&rows),
        failures,
        completed,
        skipped,
    };
    io::write_atomic(&root.join(RESULTS_CSV), results_to_csv(&rows)?.as_bytes())?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| TclError::Format {
        path: root.join(SUMMARY_JSON),
        reason: e.to_string(),
    })?;
    io::write_atomic(&root.join(SUMMARY_JSON), (json + "\n").as_bytes())?;
    Ok(summary)
}
