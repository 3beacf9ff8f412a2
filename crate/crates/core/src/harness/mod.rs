//! Configuration-driven experiment commands behind the command-line tool.

mod config;
mod plotdata;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, CONFIG_VERSION, OUTPUT_DIR_ENV};
pub use plotdata::{export_plotdata, parse_wide, pivot, read_wide, to_tidy, TidyRow, WideTable, TIDY_HEADER};

use crate::benchmark::{read_dataset, split_dataset, write_dataset, DataSet};
use crate::error::{Error, Result};
use crate::lpv::{LpvSubnet, SchedulingMode};
use crate::metrics::FitReport;
use crate::rng::derive_seed;
use crate::trainer::{train, Telemetry, TrainOptions, ValidationRecord};

pub const SPLIT_ROLES: [&str; 3] = ["est", "val", "test"];

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub threads: usize,
    /// Replaces the configured scheduling mode.
    pub mode: Option<SchedulingMode>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { threads: 1, mode: None }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone)]
pub struct GenerateReport {
    pub files: Vec<PathBuf>,
    pub sigma_e: f64,
}

/// Writes the estimation, validation and test records with their metadata.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<GenerateReport> {
    cfg.validate()?;
    let sys = cfg.system.build()?;
    let splits = split_dataset(sys.as_ref(), &cfg.excitation, &cfg.noise, cfg.splits, cfg.seed)?;
    create_dir(&cfg.output_dir)?;
    let mut files = Vec::new();
    for (role, ds) in SPLIT_ROLES.iter().zip([&splits.est, &splits.val, &splits.test]) {
        let path = cfg.data_path(role);
        write_dataset(ds, &path)?;
        files.push(path);
    }
    Ok(GenerateReport {
        files,
        sigma_e: splits.est.meta.sigma_e,
    })
}

fn load_split(cfg: &ExperimentConfig, role: &str) -> Result<DataSet> {
    let path = cfg.data_path(role);
    if !path.exists() {
        return Err(Error::InvalidArgument(format!(
            "{} not found; run `generate` first",
            path.display()
        )));
    }
    read_dataset(&path)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: PathBuf,
    pub history: PathBuf,
    pub best: ValidationRecord,
    pub updates: usize,
    pub skipped: usize,
    pub stopped_early: bool,
}

/// Trains on the generated estimation record and saves the best validated
/// model together with the telemetry stream.
pub fn cmd_train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TrainReport> {
    cfg.validate()?;
    let est = load_split(cfg, "est")?;
    let val = load_split(cfg, "val")?;
    let mut model_cfg = cfg.model.clone();
    if let Some(mode) = opts.mode {
        model_cfg.mode = mode;
    }
    let norm = est.meta.stats.clone().unwrap_or_else(|| est.compute_stats());
    let net = LpvSubnet::init(&model_cfg, norm, derive_seed(cfg.seed, "model"))?;
    let mut training = cfg.training.clone();
    training.seed = derive_seed(cfg.seed, "training");

    create_dir(&cfg.output_dir)?;
    let history_path = cfg.history_path();
    let file = std::fs::File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    let mut sink = std::io::BufWriter::new(file);
    let outcome = {
        let mut telemetry = Telemetry::new(&mut sink)?;
        train(
            net,
            &est,
            &val,
            &training,
            TrainOptions { threads: opts.threads },
            Some(&mut telemetry),
        )?
    };
    sink.flush().map_err(|e| Error::io(&history_path, e))?;
    let model_path = cfg.model_path();
    outcome.net.save(&model_path)?;
    let best = outcome
        .history
        .best_validation()
        .cloned()
        .expect("initial validation is always recorded");
    Ok(TrainReport {
        model: model_path,
        history: history_path,
        best,
        updates: outcome.history.updates.len(),
        skipped: outcome.history.skipped,
        stopped_early: outcome.history.stopped_early,
    })
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub fit: FitReport,
    pub mode: SchedulingMode,
    pub predictions: PathBuf,
    pub fit_csv: PathBuf,
}

pub fn predictions_header(n_y: usize, n_p: usize) -> String {
    let mut cols = vec!["k".to_string()];
    for prefix in ["y", "y_hat", "error"] {
        cols.extend((1..=n_y).map(|i| format!("{prefix}_{i}")));
    }
    cols.extend((1..=n_p).map(|i| format!("p_hat_{i}")));
    cols.join(",")
}

/// Free-run simulation of a saved model on a data file: the measured outputs
/// enter only through the encoder.
pub fn evaluate_model(net: &LpvSubnet, data: &DataSet, mode: SchedulingMode, snr_db: Option<f64>) -> Result<(FitReport, Vec<String>)> {
    let lag = net.lag();
    if data.len() < lag + 2 {
        return Err(Error::InvalidArgument(format!(
            "data of {} samples too short for lag {lag}",
            data.len()
        )));
    }
    let traj = net.simulate(data, mode, lag, None)?;
    let y = data.y_rows();
    let fit = FitReport::new(&y[lag..], &traj.y_hat, snr_db)?;
    let lines = traj
        .y_hat
        .iter()
        .zip(&traj.sched)
        .zip(&fit.errors)
        .enumerate()
        .map(|(i, ((yh, p), e))| {
            let k = lag + i;
            let mut line = k.to_string();
            for v in y[k].iter().chain(yh).chain(e).chain(p) {
                line.push(',');
                line.push_str(&v.to_string());
            }
            line
        })
        .collect();
    Ok((fit, lines))
}

/// Evaluates `model` (default: the trained model) on `data` (default: the
/// test record) and writes per-sample predictions plus the fit summary.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    model: Option<&Path>,
    data: Option<&Path>,
) -> Result<EvalReport> {
    let model_path = model.map_or_else(|| cfg.model_path(), Path::to_path_buf);
    let data_path = data.map_or_else(|| cfg.data_path("test"), Path::to_path_buf);
    let net = LpvSubnet::load(&model_path)?;
    let ds = read_dataset(&data_path)?;
    let mode = opts.mode.unwrap_or(net.mode);
    if mode == SchedulingMode::Oracle && ds.p().is_none() {
        return Err(Error::InvalidArgument(format!(
            "oracle evaluation needs p columns, {} has none",
            data_path.display()
        )));
    }
    let snr = ds.meta.snr_db.or(cfg.noise.snr_db);
    let (fit, lines) = evaluate_model(&net, &ds, mode, snr)?;
    create_dir(&cfg.output_dir)?;
    let predictions = cfg.output_dir.join("predictions.csv");
    let mut text = predictions_header(net.model.n_y, net.model.n_p());
    text.push('\n');
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    std::fs::write(&predictions, text).map_err(|e| Error::io(&predictions, e))?;
    let fit_csv = cfg.output_dir.join("fit.csv");
    let summary = format!("{}\n{}\n", FitReport::CSV_HEADER, fit.csv_row());
    std::fs::write(&fit_csv, summary).map_err(|e| Error::io(&fit_csv, e))?;
    Ok(EvalReport {
        fit,
        mode,
        predictions,
        fit_csv,
    })
}

/// Long-format export of the given tables (default: history and predictions
/// in the output directory, whichever exist).
pub fn cmd_export_plotdata(cfg: &ExperimentConfig, inputs: &[PathBuf], out: Option<&Path>) -> Result<(PathBuf, usize)> {
    let inputs: Vec<PathBuf> = if inputs.is_empty() {
        [cfg.history_path(), cfg.output_dir.join("predictions.csv")]
            .into_iter()
            .filter(|p| p.exists())
            .collect()
    } else {
        inputs.to_vec()
    };
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no tables to export; train or evaluate first".into()));
    }
    let out = out.map_or_else(|| cfg.output_dir.join("plotdata.csv"), Path::to_path_buf);
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let rows = export_plotdata(&refs, &out)?;
    Ok((out, rows))
}
