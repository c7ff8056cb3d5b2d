use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;

use stode_core::checkpoint::{self, Checkpoint};
use stode_core::data::{
    load_matrix_csv, split_chronological, synth_generate, write_matrix_csv, Dataset, Scaler, SeriesMatrix, SynthParams,
};
use stode_core::metrics::MetricReport;
use stode_core::train::{evaluate_report, report_horizons, train};
use stode_core::verify::{self, Check, Suite};
use stode_core::{Mode, Model};

use crate::config::RunConfig;

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn load_series(path: &Path) -> Result<SeriesMatrix> {
    load_matrix_csv(path).with_context(|| format!("loading {}", path.display()))
}

fn horizons(run: &RunConfig, model: &Model) -> Vec<usize> {
    if run.horizons.is_empty() {
        report_horizons(model.config.horizon)
    } else {
        run.horizons.clone()
    }
}

fn write_report(report: &MetricReport, dir: &Path, stem: &str) -> Result<()> {
    report.write(&dir.join(format!("{stem}.json")), &dir.join(format!("{stem}.csv")))?;
    print!("{}", report.to_csv());
    Ok(())
}

pub struct TrainArtifacts {
    pub config: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub report: PathBuf,
}

pub fn train_run(run: &RunConfig) -> Result<TrainArtifacts> {
    let dir = &run.output_dir;
    prepare_dir(dir)?;
    let config = run.echo(dir)?;
    info!("resolved configuration written to {}", config.display());

    let series = load_series(run.data_path()?)?;
    let model_cfg = run.model_config(series.cols())?;
    let train_cfg = run.train_config()?;
    let data = Dataset::prepare(series, run.split, run.scaler, run.input_len, run.horizon, run.mode)?;
    info!(
        "{} variables, {} train / {} val / {} test windows, receptive field {}",
        data.nodes(),
        data.train.len(),
        data.val.len(),
        data.test.len(),
        model_cfg.receptive_field()?
    );
    let mut model = Model::new(model_cfg, run.seed)?;
    let counts = model.parameter_count();
    info!(
        "variant {}: {} parameters plus {} attentive",
        model.variant_name(),
        counts.core,
        counts.attentive
    );
    let history = train(&mut model, &data, &train_cfg)?;

    let checkpoint = dir.join("checkpoint.json");
    checkpoint::save(&checkpoint, &model, Some(&data.scaler))?;
    let log = dir.join("training_log.csv");
    std::fs::write(&log, history.to_csv())?;
    std::fs::write(dir.join("history.json"), serde_json::to_string_pretty(&history)?)?;

    let report = evaluate_report(&model, &data, "test", &horizons(run, &model), run.mask_threshold)?;
    write_report(&report, dir, "report")?;
    Ok(TrainArtifacts {
        config,
        checkpoint,
        log,
        report: dir.join("report.json"),
    })
}

/// Dataset windows matching a checkpoint's model, scaled with its stored scaler.
fn checkpoint_dataset(run: &RunConfig, ckpt: &Checkpoint) -> Result<Dataset> {
    let series = load_series(run.data_path()?)?;
    let c = &ckpt.model.config;
    if series.cols() != c.nodes {
        bail!(
            "data has {} variables but the checkpoint expects {}",
            series.cols(),
            c.nodes
        );
    }
    let split = split_chronological(series.rows(), run.split)?;
    let scaler = match &ckpt.scaler {
        Some(s) => s.clone(),
        None => Scaler::fit(run.scaler, &series, split.train.clone())?,
    };
    Ok(Dataset::with_scaler(
        series,
        split,
        scaler,
        c.input_len,
        c.horizon,
        c.mode,
    )?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn eval(run: &RunConfig, checkpoint_path: &Path, split: &str) -> Result<MetricReport> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let data = checkpoint_dataset(run, &ckpt)?;
    let report = evaluate_report(
        &ckpt.model,
        &data,
        split,
        &horizons(run, &ckpt.model),
        run.mask_threshold,
    )?;
    prepare_dir(&run.output_dir)?;
    write_report(&report, &run.output_dir, &format!("eval_{split}"))?;
    Ok(report)
}

/// Forecast from the last `T` rows of the data: one CSV row per forecast
/// step, one column per variable, in original units.
pub fn forecast(run: &RunConfig, checkpoint_path: &Path, output: Option<&Path>) -> Result<PathBuf> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let series = load_series(run.data_path()?)?;
    let c = &ckpt.model.config;
    if series.cols() != c.nodes || series.rows() < c.input_len {
        bail!(
            "forecast needs at least {} rows of {} variables, data has {} x {}",
            c.input_len,
            c.nodes,
            series.rows(),
            series.cols()
        );
    }
    let scaler = match &ckpt.scaler {
        Some(s) => s.clone(),
        None => Scaler::fit(run.scaler, &series, 0..series.rows())?,
    };
    let recent = scaler.transform(&series.slice_rows(series.rows() - c.input_len..series.rows())?)?;
    let (n, t) = (c.nodes, c.input_len);
    let x = stode_core::Tensor::from_fn(&[1, n, 1, t], |k| recent.get(k % t, k / t));
    let pred = scaler.inverse_tensor(&ckpt.model.predict(&x)?, 1)?;
    let steps = match c.mode {
        Mode::SingleStep => 1,
        Mode::MultiStep => c.horizon,
    };
    let rows: Vec<Vec<f64>> = (0..steps)
        .map(|h| (0..n).map(|i| pred.values()[i * steps + h]).collect())
        .collect();
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            prepare_dir(&run.output_dir)?;
            run.output_dir.join("forecast.csv")
        }
    };
    write_matrix_csv(&path, &SeriesMatrix::from_rows(&rows)?)?;
    info!("forecast of {steps} step(s) written to {}", path.display());
    Ok(path)
}

pub fn synth(params: &SynthParams, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    prepare_dir(dir)?;
    let (series, edges) = synth_generate(params)?;
    std::fs::write(dir.join("synth_config.json"), serde_json::to_string_pretty(params)?)?;
    let csv = dir.join("series.csv");
    write_matrix_csv(&csv, &series)?;
    let json = dir.join("edges.json");
    std::fs::write(&json, serde_json::to_string_pretty(&edges)?)?;
    info!(
        "{} x {} series written to {}",
        series.rows(),
        series.cols(),
        csv.display()
    );
    Ok((csv, json))
}

pub fn verify(suite: Suite, json: Option<&Path>) -> Result<Vec<Check>> {
    let checks = verify::run(suite)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if let Some(path) = json {
        std::fs::write(path, serde_json::to_string_pretty(&checks)?)?;
    }
    Ok(checks)
}
