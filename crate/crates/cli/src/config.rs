//! Flat run configuration: defaults, then a JSON file, then `--set key=value`
//! pairs, then dedicated flags. The last writer wins.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use stode_core::data::ScalerKind;
use stode_core::train::TrainConfig;
use stode_core::{Ablation, Method, Mode, ModelConfig, SolverSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV, one timestep per row.
    pub data: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Chronological train/validation/test fractions.
    pub split: [f64; 3],
    pub scaler: ScalerKind,

    pub mode: Mode,
    pub input_len: usize,
    pub horizon: usize,
    pub hidden_dim: usize,
    pub dilation_factor: usize,
    pub widths: Vec<usize>,
    pub cta_method: Method,
    pub cta_time: f64,
    pub cta_step: f64,
    pub cgp_method: Method,
    pub cgp_time: f64,
    pub cgp_step: f64,
    pub topk: usize,
    pub beta: f64,
    pub embed_dim: usize,
    pub dropout: f64,
    pub decoder_hidden: usize,
    /// `none` or one of the ablation variant names.
    pub ablation: String,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_step: usize,
    pub clip: Option<f64>,
    pub seed: u64,

    /// Multi-step metrics skip cells with `|truth|` at or below this value.
    pub mask_threshold: Option<f64>,
    /// Reported multi-step horizons; empty selects 3, 6 and 12 where available.
    pub horizons: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            data: None,
            output_dir: PathBuf::from("stode-output"),
            split: [0.6, 0.2, 0.2],
            scaler: ScalerKind::MaxAbs,
            mode: Mode::SingleStep,
            input_len: 24,
            horizon: 1,
            hidden_dim: 16,
            dilation_factor: 2,
            widths: vec![2, 3, 6, 7],
            cta_method: Method::Euler,
            cta_time: 3.0,
            cta_step: 1.0,
            cgp_method: Method::Euler,
            cgp_time: 1.0,
            cgp_step: 0.5,
            topk: 20,
            beta: 3.0,
            embed_dim: 8,
            dropout: 0.3,
            decoder_hidden: 16,
            ablation: "none".into(),
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            lr_decay: train.lr_decay,
            lr_step: train.lr_step,
            clip: train.clip,
            seed: train.seed,
            mask_threshold: Some(0.0),
            horizons: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Model configuration for a dataset with `nodes` variables.
    pub fn model_config(&self, nodes: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            nodes,
            input_dim: 1,
            hidden_dim: self.hidden_dim,
            input_len: self.input_len,
            horizon: self.horizon,
            mode: self.mode,
            dilation_factor: self.dilation_factor,
            widths: self.widths.clone(),
            cta: SolverSpec::new(self.cta_method, self.cta_time, self.cta_step)?,
            cgp: SolverSpec::new(self.cgp_method, self.cgp_time, self.cgp_step)?,
            topk: self.topk,
            beta: self.beta,
            embed_dim: self.embed_dim,
            dropout: self.dropout,
            decoder_hidden: self.decoder_hidden,
            ablation: Ablation::parse(&self.ablation)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_decay: self.lr_decay,
            lr_step: self.lr_step,
            clip: self.clip,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn data_path(&self) -> Result<&Path> {
        match &self.data {
            Some(p) => Ok(p),
            None => bail!("no input data: set `data` in the config or pass --data"),
        }
    }

    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Parses `value` as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies the layers in precedence order and rejects unknown keys.
pub fn resolve(file: Option<&Path>, sets: &[String], flags: Vec<(&str, Value)>) -> Result<RunConfig> {
    let Value::Object(mut map) = serde_json::to_value(RunConfig::default())? else {
        unreachable!("RunConfig serialises to an object");
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let layer: Map<String, Value> = serde_json::from_str(&text)
            .with_context(|| format!("config {} is not a flat JSON object", path.display()))?;
        map.extend(layer);
    }
    for pair in sets {
        let Some((key, value)) = pair.split_once('=') else {
            bail!("--set expects key=value, got `{pair}`");
        };
        map.insert(key.trim().to_string(), parse_value(value.trim()));
    }
    for (key, value) in flags {
        map.insert(key.to_string(), value);
    }
    serde_json::from_value(Value::Object(map)).context("invalid run configuration")
}
