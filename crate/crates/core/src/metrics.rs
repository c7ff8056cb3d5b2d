//! Forecast accuracy metrics for both protocols.
//!
//! Single-step: root relative squared error (RSE) and mean per-variable
//! Pearson correlation (CORR). Multi-step: MAE, RMSE and MAPE (percent).
//! Inputs are `T' × N` matrices stored as rank-2 tensors.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::Mode;
use crate::tensor::Tensor;

fn check_pair(pred: &Tensor, truth: &Tensor) -> Result<(usize, usize)> {
    if pred.shape() != truth.shape() || truth.rank() != 2 {
        return dim_err(format!(
            "metrics need equal T' x N matrices, got {:?} and {:?}",
            pred.shape(),
            truth.shape()
        ));
    }
    Ok((truth.shape()[0], truth.shape()[1]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleStepMetrics {
    pub rse: f64,
    pub corr: f64,
}

/// RSE over all cells and CORR averaged over variables whose truth varies.
/// A variable whose prediction is constant contributes a correlation of 0.
pub fn single_step_metrics(pred: &Tensor, truth: &Tensor) -> Result<SingleStepMetrics> {
    let (t, n) = check_pair(pred, truth)?;
    if t < 2 {
        return Err(Error::Data(format!(
            "single-step metrics need at least 2 timesteps, got {t}"
        )));
    }
    let (p, y) = (pred.values(), truth.values());
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let num: f64 = p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = y.iter().map(|b| (b - mean) * (b - mean)).sum();
    if den == 0.0 {
        return Err(Error::Data("RSE undefined: truth has zero variance".into()));
    }
    let rse = num.sqrt() / den.sqrt();

    let mut total = 0.0;
    let mut counted = 0;
    for i in 0..n {
        let col = |v: &[f64]| (0..t).map(|k| v[k * n + i]).collect::<Vec<f64>>();
        let (pc, yc) = (col(p), col(y));
        let mp = pc.iter().sum::<f64>() / t as f64;
        let my = yc.iter().sum::<f64>() / t as f64;
        let vy: f64 = yc.iter().map(|v| (v - my) * (v - my)).sum();
        if vy == 0.0 {
            continue;
        }
        let vp: f64 = pc.iter().map(|v| (v - mp) * (v - mp)).sum();
        let cov: f64 = pc.iter().zip(&yc).map(|(a, b)| (a - mp) * (b - my)).sum();
        counted += 1;
        if vp > 0.0 {
            total += (cov / (vp * vy).sqrt()).clamp(-1.0, 1.0);
        }
    }
    if counted == 0 {
        return Err(Error::Data("CORR undefined: every variable has zero variance".into()));
    }
    Ok(SingleStepMetrics {
        rse,
        corr: total / counted as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiStepMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
}

/// With `Some(threshold)` every metric uses only cells where
/// `|truth| > threshold`. With `None` MAE and RMSE use all cells and MAPE
/// skips cells whose truth is exactly zero.
pub fn multi_step_metrics(pred: &Tensor, truth: &Tensor, mask_threshold: Option<f64>) -> Result<MultiStepMetrics> {
    if pred.shape() != truth.shape() {
        return dim_err(format!(
            "metrics need equal shapes, got {:?} and {:?}",
            pred.shape(),
            truth.shape()
        ));
    }
    let keep = |y: f64| mask_threshold.is_none_or(|th| y.abs() > th);
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    let (mut pct, mut n_pct) = (0.0, 0usize);
    for (&p, &y) in pred.values().iter().zip(truth.values()) {
        if !keep(y) {
            continue;
        }
        let e = p - y;
        abs += e.abs();
        sq += e * e;
        n += 1;
        if y != 0.0 {
            pct += (e / y).abs();
            n_pct += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("every cell is masked".into()));
    }
    Ok(MultiStepMetrics {
        mae: abs / n as f64,
        rmse: (sq / n as f64).sqrt(),
        mape: if n_pct == 0 { 0.0 } else { 100.0 * pct / n_pct as f64 },
    })
}

/// Metrics of one forecasting horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub corr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mape: Option<f64>,
}

impl HorizonMetrics {
    pub fn single(horizon: usize, samples: usize, m: SingleStepMetrics) -> Self {
        HorizonMetrics {
            horizon,
            samples,
            rse: Some(m.rse),
            corr: Some(m.corr),
            mae: None,
            rmse: None,
            mape: None,
        }
    }

    pub fn multi(horizon: usize, samples: usize, m: MultiStepMetrics) -> Self {
        HorizonMetrics {
            horizon,
            samples,
            rse: None,
            corr: None,
            mae: Some(m.mae),
            rmse: Some(m.rmse),
            mape: Some(m.mape),
        }
    }

    /// `(name, value)` pairs of the metrics present, in report order.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        [
            ("rse", self.rse),
            ("corr", self.corr),
            ("mae", self.mae),
            ("rmse", self.rmse),
            ("mape", self.mape),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variant: String,
    pub protocol: Mode,
    pub split: String,
    pub rows: Vec<HorizonMetrics>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let names: Vec<&str> = self
            .rows
            .first()
            .map_or_else(Vec::new, |r| r.values().into_iter().map(|(k, _)| k).collect());
        let mut out = format!("variant,protocol,split,horizon,samples,{}\n", names.join(","));
        let protocol = match self.protocol {
            Mode::SingleStep => "single_step",
            Mode::MultiStep => "multi_step",
        };
        for r in &self.rows {
            let vals: Vec<String> = r.values().into_iter().map(|(_, v)| format!("{v:?}")).collect();
            let _ = writeln!(
                out,
                "{},{protocol},{},{},{},{}",
                self.variant,
                self.split,
                r.horizon,
                r.samples,
                vals.join(",")
            );
        }
        out
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, serde_json::to_string_pretty(self)?)?;
        std::fs::write(csv_path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn single_step_hand_values() {
        let truth = m(3, 1, &[1.0, 2.0, 3.0]);
        let pred = m(3, 1, &[1.1, 2.1, 3.1]);
        let s = single_step_metrics(&pred, &truth).unwrap();
        assert!((s.corr - 1.0).abs() < 1e-9);
        assert!((s.rse - 0.03f64.sqrt() / 2.0f64.sqrt()).abs() < 1e-9);
        assert!((s.rse - 0.122474487).abs() < 1e-9);

        let exact = single_step_metrics(&truth, &truth).unwrap();
        assert_eq!(exact.rse, 0.0);
        assert!((exact.corr - 1.0).abs() < 1e-12);

        let mean = single_step_metrics(&m(3, 1, &[2.0; 3]), &truth).unwrap();
        assert!((mean.rse - 1.0).abs() < 1e-12);
        assert_eq!(mean.corr, 0.0);
    }

    #[test]
    fn corr_skips_constant_truth() {
        let truth = m(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let pred = m(3, 2, &[1.0, 0.0, 2.0, 1.0, 3.0, 2.0]);
        assert!((single_step_metrics(&pred, &truth).unwrap().corr - 1.0).abs() < 1e-12);
        let flat = m(3, 1, &[4.0; 3]);
        assert!(single_step_metrics(&flat, &flat).is_err());
        assert!(single_step_metrics(&m(1, 1, &[1.0]), &m(1, 1, &[2.0])).is_err());
    }

    #[test]
    fn multi_step_hand_values() {
        let truth = m(1, 2, &[2.0, 4.0]);
        let pred = m(1, 2, &[1.0, 6.0]);
        let r = multi_step_metrics(&pred, &truth, Some(0.0)).unwrap();
        assert!((r.mae - 1.5).abs() < 1e-9);
        assert!((r.rmse - 2.5f64.sqrt()).abs() < 1e-9);
        assert!((r.rmse - 1.58113883).abs() < 1e-8);
        assert!((r.mape - 50.0).abs() < 1e-9);
        assert_eq!(
            multi_step_metrics(&truth, &truth, Some(0.0)).unwrap(),
            MultiStepMetrics {
                mae: 0.0,
                rmse: 0.0,
                mape: 0.0
            }
        );
    }

    #[test]
    fn zero_truth_masking() {
        let truth = m(1, 2, &[0.0, 4.0]);
        let pred = m(1, 2, &[1.0, 4.0]);
        let masked = multi_step_metrics(&pred, &truth, Some(0.0)).unwrap();
        assert_eq!((masked.mae, masked.rmse, masked.mape), (0.0, 0.0, 0.0));
        let unmasked = multi_step_metrics(&pred, &truth, None).unwrap();
        assert!((unmasked.mae - 0.5).abs() < 1e-12);
        assert!((unmasked.rmse - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(unmasked.mape, 0.0);
        assert!(multi_step_metrics(&pred, &m(1, 2, &[0.0, 0.0]), Some(0.0)).is_err());
    }

    #[test]
    fn report_serialisation() {
        let report = MetricReport {
            variant: "continuous".into(),
            protocol: Mode::MultiStep,
            split: "test".into(),
            rows: vec![
                HorizonMetrics::multi(
                    3,
                    10,
                    MultiStepMetrics {
                        mae: 1.0,
                        rmse: 2.0,
                        mape: 3.0,
                    },
                ),
                HorizonMetrics::multi(
                    12,
                    10,
                    MultiStepMetrics {
                        mae: 4.0,
                        rmse: 5.0,
                        mape: 6.0,
                    },
                ),
            ],
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "variant,protocol,split,horizon,samples,mae,rmse,mape");
        assert_eq!(lines[2], "continuous,multi_step,test,12,10,4.0,5.0,6.0");
        let json = serde_json::to_value(&report).unwrap();
        let keys: Vec<&String> = json["rows"][0].as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 5);
        let back: MetricReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);
    }
}
