//! Optimisation: Adam, step-decay learning rate, global-norm clipping and the
//! epoch loop with best-validation model selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{Dataset, Window};
use crate::error::{contract_err, dim_err, Error, Result};
use crate::metrics::{multi_step_metrics, single_step_metrics, HorizonMetrics, MetricReport, SingleStepMetrics};
use crate::model::{loss_mae, Mode, Model, Phase};
use crate::tensor::Tensor;

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[&Tensor], lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from each parameter's gradient buffer.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.m.len() {
            return contract_err(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            ));
        }
        for (k, p) in params.iter().enumerate() {
            if p.grad().is_none() {
                return contract_err(format!("parameter {k} has no gradient buffer"));
            }
            if p.len() != self.m[k].len() {
                return dim_err(format!(
                    "parameter {k} has {} values, moments hold {}",
                    p.len(),
                    self.m[k].len()
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            let grad = p.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, value) in p.values_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *value -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `base · γ^⌊epoch / step⌋`.
pub fn lr_schedule(base: f64, gamma: f64, step: usize, epoch: usize) -> f64 {
    if step == 0 {
        return base;
    }
    base * gamma.powi((epoch / step) as i32)
}

pub fn global_grad_norm(params: &[&mut Tensor]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(params: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative decay `γ`; 1 disables decay.
    pub lr_decay: f64,
    /// Epochs between decays.
    pub lr_step: usize,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 4,
            lr: 1e-3,
            lr_decay: 1.0,
            lr_step: 10,
            clip: Some(5.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return contract_err("batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return contract_err(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return contract_err(format!("lr decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.clip.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return contract_err("clip norm must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mae: f64,
    pub val_mae: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 when no epoch ran).
    pub best_epoch: usize,
    pub best_val_mae: Option<f64>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_mae,val_mae";

    /// One row per epoch. Wall-clock time is left out so reruns with the
    /// same seed produce identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            out.push_str(&format!("{},{:?},{:?},{:?}\n", r.epoch, r.lr, r.train_mae, r.val_mae));
        }
        out
    }
}

fn check_dataset(model: &Model, data: &Dataset) -> Result<()> {
    let c = &model.config;
    if c.nodes != data.nodes()
        || c.input_dim != 1
        || c.input_len != data.input_len
        || c.horizon != data.horizon
        || c.mode != data.mode
    {
        return contract_err(format!(
            "dataset (N={}, T={}, H={}, {:?}) does not match model (N={}, D={}, T={}, H={}, {:?})",
            data.nodes(),
            data.input_len,
            data.horizon,
            data.mode,
            c.nodes,
            c.input_dim,
            c.input_len,
            c.horizon,
            c.mode
        ));
    }
    Ok(())
}

/// One optimisation step on `batch`; returns the batch MAE.
pub fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    x: &Tensor,
    y: &Tensor,
    clip: Option<f64>,
    dropout_rng: &mut ChaCha8Rng,
    step_index: usize,
) -> Result<f64> {
    model.params.zero_grad();
    let loss_value = {
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let pred = model.forward(
            tape.constant(x.detached()),
            &bound,
            &mut Phase::Train { rng: dropout_rng },
        )?;
        let loss = loss_mae(pred, tape.constant(y.detached()))?;
        let grads = tape.backward(loss)?;
        let flat = bound.flat.clone();
        for (var, param) in flat.into_iter().zip(model.params.tensors_mut()) {
            grads.accumulate_into(var, param)?;
        }
        loss.item()
    };
    let mut params = model.params.tensors_mut();
    let norm = match clip {
        Some(c) => clip_global_norm(&mut params, c),
        None => global_grad_norm(&params),
    };
    if !loss_value.is_finite() || !norm.is_finite() {
        return Err(Error::NonFinite {
            step: step_index,
            lr: opt.lr,
            grad_norm: norm,
        });
    }
    opt.step(&mut params)?;
    Ok(loss_value)
}

/// Mean absolute error over `windows` in scaled units, without dropout.
pub fn evaluate_mae(model: &Model, data: &Dataset, windows: &[Window], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let (x, y) = data.batch(&refs)?;
        let pred = model.predict(&x)?;
        total += pred
            .values()
            .iter()
            .zip(y.values())
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>();
        count += y.len();
    }
    if count == 0 {
        return contract_err("no windows to evaluate");
    }
    Ok(total / count as f64)
}

/// Trains in place and restores the parameters of the best validation epoch.
pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    train_with(model, data, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with<F>(model: &mut Model, data: &Dataset, cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainHistory>
where
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    check_dataset(model, data)?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut opt = Adam::new(&model.params.tensors(), cfg.lr);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best: Option<(f64, usize, crate::model::ModelParams)> = None;
    let mut step_index = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        opt.lr = lr_schedule(cfg.lr, cfg.lr_decay, cfg.lr_step, epoch);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut weight) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&Window> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (x, y) = data.batch(&refs)?;
            let loss = train_step(model, &mut opt, &x, &y, cfg.clip, &mut dropout_rng, step_index)?;
            step_index += 1;
            loss_sum += loss * chunk.len() as f64;
            weight += chunk.len();
        }
        let val_mae = evaluate_mae(model, data, &data.val, cfg.batch_size.max(64))?;
        let record = EpochRecord {
            epoch,
            lr: opt.lr,
            train_mae: loss_sum / weight as f64,
            val_mae,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: lr {:.2e} train_mae {:.5} val_mae {:.5} ({:.1}s)",
            record.lr,
            record.train_mae,
            record.val_mae,
            record.wall_seconds
        );
        on_epoch(&record);
        if best.as_ref().is_none_or(|(v, _, _)| val_mae < *v) {
            best = Some((val_mae, epoch, model.params.clone()));
        }
        history.epochs.push(record);
    }
    let (val, epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    history.best_epoch = epoch;
    history.best_val_mae = Some(val);
    Ok(history)
}

/// Predictions and targets for `windows`, inverse-scaled to original units.
pub fn predict_windows(
    model: &Model,
    data: &Dataset,
    windows: &[Window],
    batch_size: usize,
) -> Result<(Tensor, Tensor)> {
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let mut tail = None;
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let (x, y) = data.batch(&refs)?;
        let p = model.predict(&x)?;
        tail = Some(p.shape()[1..].to_vec());
        preds.extend(data.scaler.inverse_tensor(&p, 1)?.into_values());
        truths.extend(data.scaler.inverse_tensor(&y, 1)?.into_values());
    }
    let Some(tail) = tail else {
        return contract_err("no windows to predict");
    };
    let mut shape = vec![windows.len()];
    shape.extend(tail);
    Ok((Tensor::new(shape.clone(), preds)?, Tensor::new(shape, truths)?))
}

/// Single-step metrics of the forecast that repeats the last observed value.
pub fn persistence_metrics(data: &Dataset, windows: &[Window]) -> Result<SingleStepMetrics> {
    if data.mode != Mode::SingleStep {
        return contract_err("persistence baseline is defined for single-step windows");
    }
    let n = data.nodes();
    let mut pred = Vec::with_capacity(windows.len() * n);
    let mut truth = Vec::with_capacity(windows.len() * n);
    for w in windows {
        for i in 0..n {
            pred.push(data.raw.get(w.input.end - 1, i));
            truth.push(data.raw.get(w.target.start, i));
        }
    }
    let shape = vec![windows.len(), n];
    single_step_metrics(&Tensor::new(shape.clone(), pred)?, &Tensor::new(shape, truth)?)
}

/// `[B, N, 1]` or the `h`-th step of `[B, N, 1, H]` as a `B × N` matrix.
fn horizon_matrix(t: &Tensor, step: Option<usize>) -> Result<Tensor> {
    let s = t.shape();
    let (b, n) = (s[0], s[1]);
    let values = match step {
        None => t.values().to_vec(),
        Some(h) => {
            let len = s[3];
            (0..b * n).map(|k| t.values()[k * len + h]).collect()
        }
    };
    Tensor::new(vec![b, n], values)
}

/// Horizons reported for multi-step forecasts: 3, 6 and 12 when available,
/// otherwise the full horizon.
pub fn report_horizons(horizon: usize) -> Vec<usize> {
    let hs: Vec<usize> = [3, 6, 12].into_iter().filter(|&h| h <= horizon).collect();
    if hs.is_empty() {
        vec![horizon]
    } else {
        hs
    }
}

/// Metric report on one split in original units.
pub fn evaluate_report(
    model: &Model,
    data: &Dataset,
    split: &str,
    horizons: &[usize],
    mask_threshold: Option<f64>,
) -> Result<MetricReport> {
    let windows = match split {
        "train" => &data.train,
        "val" | "validation" => &data.val,
        "test" => &data.test,
        other => return contract_err(format!("unknown split `{other}`")),
    };
    let (pred, truth) = predict_windows(model, data, windows, 64)?;
    let samples = windows.len();
    let rows = match model.config.mode {
        Mode::SingleStep => {
            let m = single_step_metrics(&horizon_matrix(&pred, None)?, &horizon_matrix(&truth, None)?)?;
            vec![HorizonMetrics::single(model.config.horizon, samples, m)]
        }
        Mode::MultiStep => horizons
            .iter()
            .map(|&h| {
                if h == 0 || h > model.config.horizon {
                    return contract_err(format!("horizon {h} outside 1..={}", model.config.horizon));
                }
                let m = multi_step_metrics(
                    &horizon_matrix(&pred, Some(h - 1))?,
                    &horizon_matrix(&truth, Some(h - 1))?,
                    mask_threshold,
                )?;
                Ok(HorizonMetrics::multi(h, samples, m))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(MetricReport {
        variant: model.variant_name().to_string(),
        protocol: model.config.mode,
        split: split.to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, ScalerKind, SynthParams};
    use crate::model::{tiny_config, ModelConfig};
    use crate::ode::SolverSpec;

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut p = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap().with_grad();
        let mut opt = Adam::new(&[&p], 0.1);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.values(), &[1.0, -2.0]);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap().with_grad();
        p.accumulate_grad(&[3.0, -0.01]).unwrap();
        let mut opt = Adam::new(&[&p], 0.05);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.values()[0] + 0.05).abs() < 1e-8);
        assert!((p.values()[1] - 0.05).abs() < 1e-5);
    }

    #[test]
    fn adam_quadratic_bowl() {
        let mut x = Tensor::scalar(1.0).with_grad();
        let mut opt = Adam::new(&[&x], 0.1);
        for _ in 0..200 {
            x.zero_grad();
            let g = 2.0 * x.values()[0];
            x.accumulate_grad(&[g]).unwrap();
            opt.step(&mut [&mut x]).unwrap();
        }
        assert!(x.values()[0].abs() < 1e-2, "x = {}", x.values()[0]);
    }

    #[test]
    fn adam_requires_gradients() {
        let mut p = Tensor::scalar(1.0);
        let mut opt = Adam::new(&[&p], 0.1);
        assert!(matches!(opt.step(&mut [&mut p]), Err(Error::Contract(_))));
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0.01, 1.0, 10, 57), 0.01);
        assert_eq!(lr_schedule(0.01, 0.5, 10, 20), 0.0025);
        assert_eq!(lr_schedule(0.01, 0.5, 10, 9), 0.01);
    }

    #[test]
    fn clipping_never_increases_norm() {
        let mut a = Tensor::zeros(&[2]).with_grad();
        a.accumulate_grad(&[3.0, 4.0]).unwrap();
        let mut b = Tensor::zeros(&[1]).with_grad();
        b.accumulate_grad(&[12.0]).unwrap();
        let mut params = vec![&mut a, &mut b];
        assert_eq!(clip_global_norm(&mut params, 100.0), 13.0);
        assert_eq!(global_grad_norm(&params), 13.0);
        clip_global_norm(&mut params, 1.3);
        assert!((global_grad_norm(&params) - 1.3).abs() < 1e-12);
        assert!((a.grad().unwrap()[0] - 0.3).abs() < 1e-12);
    }

    fn synth_setup(steps: usize) -> (ModelConfig, Dataset) {
        let (series, _) = synth_generate(&SynthParams {
            nodes: 3,
            steps,
            ..SynthParams::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            input_len: 6,
            cta: SolverSpec::euler(3.0, 1.0).unwrap(),
            ..tiny_config()
        };
        let data = Dataset::prepare(series, [0.6, 0.2, 0.2], ScalerKind::MaxAbs, 6, 1, Mode::SingleStep).unwrap();
        (cfg, data)
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let (cfg, data) = synth_setup(80);
        let mut m = Model::new(cfg, 1).unwrap();
        let before = m.clone();
        let h = train(
            &mut m,
            &data,
            &TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(h.epochs.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn training_reduces_loss_deterministically() {
        let (cfg, data) = synth_setup(160);
        let run = TrainConfig {
            epochs: 5,
            batch_size: 8,
            lr: 0.01,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut a = Model::new(cfg.clone(), 2).unwrap();
        let ha = train(&mut a, &data, &run).unwrap();
        assert_eq!(ha.epochs.len(), 5);
        let first = ha.epochs[0].train_mae;
        let last = ha.epochs[4].train_mae;
        assert!(last < 0.7 * first, "train MAE {first} -> {last}");

        let mut b = Model::new(cfg, 2).unwrap();
        let hb = train(&mut b, &data, &run).unwrap();
        let strip = |h: &TrainHistory| {
            h.epochs
                .iter()
                .map(|r| (r.epoch, r.lr, r.train_mae, r.val_mae))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&ha), strip(&hb));
        assert_eq!(a.params, b.params);
        let best = ha.epochs.iter().map(|r| r.val_mae).fold(f64::INFINITY, f64::min);
        assert_eq!(ha.best_val_mae, Some(best));
        assert_eq!(evaluate_mae(&a, &data, &data.val, 64).unwrap(), best);
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let (mut cfg, data) = synth_setup(80);
        cfg.nodes = 4;
        cfg.topk = 4;
        let mut m = Model::new(cfg, 1).unwrap();
        assert!(matches!(
            train(&mut m, &data, &TrainConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let (cfg, data) = synth_setup(80);
        let mut m = Model::new(cfg, 1).unwrap();
        m.params.decoder[1].bias.values_mut()[0] = f64::NAN;
        match train(&mut m, &data, &TrainConfig::default()) {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn report_horizon_selection() {
        assert_eq!(report_horizons(12), vec![3, 6, 12]);
        assert_eq!(report_horizons(7), vec![3, 6]);
        assert_eq!(report_horizons(2), vec![2]);
    }
}
