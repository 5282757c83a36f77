use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tcl_core::experiment::{
    self, evaluate_nsvica, evaluate_tcl, generate_data, ica_config, model_seeds, run_sweep, train_config,
    ExperimentConfig, Method, PipelinePoint, TclScores,
};
use tcl_core::io;
use tcl_core::linear_ica::{fastica, nsvica};
use tcl_core::network::{features_forward, init_params, TclModel};
use tcl_core::trainer::{chance_level, heldout_accuracy, train_tcl, TrainHistory};
use tcl_core::{Result, TclError};

/// Time-contrastive learning for nonlinear ICA.
#[derive(Parser, Debug)]
#[command(name = "tcl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (JSON); missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the base seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample sources and mix them; writes a dataset directory.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Mixing depth (default: first entry of `depths`).
        #[arg(long)]
        depth: Option<usize>,
        /// Number of segments (default: first entry of `segment_counts`).
        #[arg(long)]
        segments: Option<usize>,
    },
    /// Train a TCL feature extractor on a dataset; writes a checkpoint directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Linear ICA on learned features (`tcl`) or on raw observations (`nsvica`).
    Ica {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory, required for `tcl`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "tcl")]
        method: Method,
    },
    /// Score an ICA result against the true sources; writes a JSON report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ica: PathBuf,
        /// Checkpoint directory, required when the ICA result came from `tcl`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the full grid of the configuration; resumes completed cells.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => io::read_json(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_or(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// The configuration with its data fields replaced by the dataset's own.
fn point_for(cfg: &mut ExperimentConfig, header: &io::DatasetHeader, method: Method) -> PipelinePoint {
    cfg.n = header.n;
    cfg.seg_len = header.seg_len;
    cfg.stationary_count = header.stationary_count;
    cfg.family = header.family;
    PipelinePoint {
        depth: header.depth,
        segments: header.segments,
        seed: cfg.seed,
        method,
    }
}

fn load_model(dir: Option<&Path>) -> Result<(TclModel, Option<TrainHistory>)> {
    let dir = dir.ok_or_else(|| TclError::InvalidParameter("--model is required for the tcl method".into()))?;
    let (_, model) = io::read_checkpoint(dir)?;
    let history_path = dir.join("history.json");
    let history = if history_path.exists() {
        Some(io::read_json(&history_path)?)
    } else {
        None
    };
    Ok((model, history))
}

fn generate(common: &Common, depth: Option<usize>, segments: Option<usize>) -> Result<()> {
    let cfg = load_config(common).map_err(|e| e.in_stage("config"))?;
    let depth = depth.unwrap_or(cfg.depths[0]);
    let segments = segments.unwrap_or(cfg.segment_counts[0]);
    let out = out_or(common, "data");
    let data = generate_data(&cfg, depth, segments, cfg.seed).map_err(|e| e.in_stage("generate"))?;
    io::write_dataset(&out, &data.dataset).map_err(|e| e.in_stage("generate"))?;
    println!(
        "wrote {} samples (n={}, segments={segments}, depth={depth}) to {}",
        data.dataset.observations.len(),
        cfg.n,
        out.display()
    );
    Ok(())
}

fn train(common: &Common, data: &Path) -> Result<()> {
    let mut cfg = load_config(common).map_err(|e| e.in_stage("config"))?;
    let ds = io::read_dataset(data).map_err(|e| e.in_stage("load"))?;
    let point = point_for(&mut cfg, &ds.header, Method::Tcl);
    let out = out_or(common, "model");
    let (init_seed, train_seed) = model_seeds(&cfg, &point);
    let shape = cfg.model_shape(point.depth, point.segments);
    let run = || -> Result<(TclModel, TrainHistory)> {
        let model = init_params(&shape, init_seed)?;
        train_tcl(&ds.observations, model, &train_config(&cfg, &point))
    };
    let (model, history) = run().map_err(|e| e.in_stage("train"))?;
    let persist = || -> Result<()> {
        io::write_checkpoint(&out, &model, init_seed, train_seed)?;
        io::write_json(&out.join("history.json"), &history)?;
        let csv = out.join("train.csv");
        fs::write(&csv, history.to_csv()).map_err(|e| TclError::Io { path: csv, source: e })
    };
    persist().map_err(|e| e.in_stage("persist"))?;
    println!(
        "loss {:.4} -> {:.4}, held-out accuracy {:.4} (1/T = {:.4}); checkpoint in {}",
        history.initial_loss,
        history.final_loss,
        history.heldout_accuracy,
        1.0 / point.segments as f64,
        out.display()
    );
    Ok(())
}

fn ica(common: &Common, data: &Path, model: Option<&Path>, method: Method) -> Result<()> {
    let mut cfg = load_config(common).map_err(|e| e.in_stage("config"))?;
    let ds = io::read_dataset(data).map_err(|e| e.in_stage("load"))?;
    let point = point_for(&mut cfg, &ds.header, method);
    let out = out_or(common, "ica");
    let res = match method {
        Method::Tcl => {
            let (model, _) = load_model(model).map_err(|e| e.in_stage("load"))?;
            let h = features_forward(&model.features, &ds.observations.values)
                .map_err(|e| e.in_stage("features"))?
                .features;
            fastica(&h, &ica_config(&cfg, &point))
        }
        Method::Nsvica => nsvica(&ds.observations.values, &ds.observations.labels),
    }
    .map_err(|e| e.in_stage("ica"))?;
    io::write_ica(&out, method.name(), &res).map_err(|e| e.in_stage("persist"))?;
    println!(
        "{method}: {} iterations, converged {}, signal strength {:.2}; written to {}",
        res.iterations,
        res.converged,
        res.signal_strength,
        out.display()
    );
    Ok(())
}

fn evaluate(common: &Common, data: &Path, ica_dir: &Path, model: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(common).map_err(|e| e.in_stage("config"))?;
    let ds = io::read_dataset(data).map_err(|e| e.in_stage("load"))?;
    let (header, res) = io::read_ica(ica_dir).map_err(|e| e.in_stage("load"))?;
    let method: Method = header.method.parse().map_err(|e: TclError| e.in_stage("load"))?;
    let point = point_for(&mut cfg, &ds.header, method);
    let out = out_or(common, "report.json");
    let report = match method {
        Method::Tcl => {
            let (model, history) = load_model(model).map_err(|e| e.in_stage("load"))?;
            let obs = &ds.observations;
            let h = features_forward(&model.features, &obs.values)
                .map_err(|e| e.in_stage("features"))?
                .features;
            let train_cfg = train_config(&cfg, &point);
            let accuracy =
                heldout_accuracy(&model, obs, train_cfg.holdout_fraction).map_err(|e| e.in_stage("evaluate"))?;
            let chance = chance_level(obs, &model.shape(), &train_cfg).map_err(|e| e.in_stage("chance"))?;
            let scores = TclScores {
                accuracy,
                chance,
                loss_increased: history.is_some_and(|h| h.loss_increased),
            };
            evaluate_tcl(&point, &ds, &h, &res, scores)?
        }
        Method::Nsvica => evaluate_nsvica(&point, &ds, &res)?,
    };
    io::write_json(&out, &report).map_err(|e| e.in_stage("persist"))?;
    println!("{method}: mean |corr| {:.4}; report in {}", report.mean_abs_corr, out.display());
    Ok(())
}

fn sweep(common: &Common) -> Result<bool> {
    let mut cfg = load_config(common).map_err(|e| e.in_stage("config"))?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    let summary = run_sweep(&cfg)?;
    println!("depth,segments,method,runs,mean_abs_corr,se,accuracy,chance");
    for c in &summary.cells {
        let fmt = |v: Option<experiment::MeanSe>| v.map(|m| format!("{:.4}", m.mean)).unwrap_or_default();
        println!(
            "{},{},{},{},{:.4},{:.4},{},{}",
            c.depth,
            c.segments,
            c.method,
            c.runs,
            c.mean_abs_corr.mean,
            c.mean_abs_corr.se,
            fmt(c.accuracy),
            fmt(c.chance)
        );
    }
    for f in &summary.failures {
        eprintln!("cell {} failed: {}", f.point.dir_name(), f.error);
    }
    eprintln!(
        "{} cells run, {} resumed, {} failed; results in {}",
        summary.completed,
        summary.skipped,
        summary.failures.len(),
        cfg.output_dir.display()
    );
    Ok(summary.failures.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { common, depth, segments } => generate(common, *depth, *segments).map(|_| true),
        Command::Train { common, data } => train(common, data).map(|_| true),
        Command::Ica { common, data, model, method } => ica(common, data, model.as_deref(), *method).map(|_| true),
        Command::Evaluate { common, data, ica, model } => evaluate(common, data, ica, model.as_deref()).map(|_| true),
        Command::Sweep { common } => sweep(common),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
