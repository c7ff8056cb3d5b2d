//! Series ingestion, scaling, chronological splits, forecasting windows and
//! the synthetic coupled-lag generator.
//!
//! Index convention (0-based): a window starting at `t` reads rows
//! `[t, t+T)`; the single-step target is row `t+T+H−1` and the multi-step
//! target is rows `[t+T, t+T+H)`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Error, Result};
use crate::model::Mode;
use crate::tensor::Tensor;

/// Time-major `S × N` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    pub names: Vec<String>,
    /// Rows dropped during ingestion because they held NaN.
    pub dropped_rows: usize,
}

impl SeriesMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Data(format!("empty series ({rows} x {cols})")));
        }
        if values.len() != rows * cols {
            return Err(Error::Data(format!(
                "{} values cannot fill a {rows} x {cols} matrix",
                values.len()
            )));
        }
        Ok(SeriesMatrix {
            rows,
            cols,
            values,
            names: (0..cols).map(|i| format!("x{i}")).collect(),
            dropped_rows: 0,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Data(format!(
                "row {bad} has {} columns, expected {cols}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Number of timesteps `S`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of variables `N`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.cols + i]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.cols..(t + 1) * self.cols]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.rows).map(|t| self.get(t, i)).collect()
    }

    pub fn slice_rows(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.rows {
            return Err(Error::Data(format!("row range {range:?} outside 0..{}", self.rows)));
        }
        let mut out = Self::new(
            range.len(),
            self.cols,
            self.values[range.start * self.cols..range.end * self.cols].to_vec(),
        )?;
        out.names = self.names.clone();
        Ok(out)
    }
}

/// Reads comma-separated float rows, one timestep per row, without a header.
/// Rows holding NaN are dropped and counted in [`SeriesMatrix::dropped_rows`].
pub fn load_matrix_csv(path: &Path) -> Result<SeriesMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    let mut dropped = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: record.len().min(c),
                    message: format!("ragged row: {} fields, expected {c}", record.len()),
                })
            }
            Some(_) => {}
        }
        let mut parsed = Vec::with_capacity(record.len());
        for (column, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                column,
                message: format!("cannot parse `{cell}` as a number"),
            })?;
            parsed.push(v);
        }
        if parsed.iter().any(|v| v.is_nan()) {
            dropped += 1;
            continue;
        }
        values.extend(parsed);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows containing NaN", path.display());
    }
    let mut m = SeriesMatrix::new(rows, cols.expect("at least one row"), values)?;
    m.dropped_rows = dropped;
    Ok(m)
}

/// Writes the matrix as comma-separated rows using shortest round-trip formatting.
pub fn write_matrix_csv(path: &Path, series: &SeriesMatrix) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for t in 0..series.rows() {
        let line: Vec<String> = series.row(t).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Contiguous row ranges of the three splits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Boundaries at `round(S·f0)` and `round(S·(f0+f1))`.
pub fn split_chronological(rows: usize, fractions: [f64; 3]) -> Result<Split> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return contract_err(format!("split fractions {fractions:?} must lie in [0, 1]"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return contract_err(format!("split fractions sum to {total}, expected 1"));
    }
    let a = (rows as f64 * fractions[0]).round() as usize;
    let b = ((rows as f64 * (fractions[0] + fractions[1])).round() as usize).min(rows);
    let split = Split {
        train: 0..a,
        val: a..b,
        test: b..rows,
    };
    for (name, r) in [
        ("train", &split.train),
        ("validation", &split.val),
        ("test", &split.test),
    ] {
        if r.is_empty() {
            return Err(Error::Data(format!(
                "{name} split is empty for {rows} rows and {fractions:?}"
            )));
        }
    }
    Ok(split)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    MaxAbs,
    ZScore,
}

impl std::str::FromStr for ScalerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "max_abs" | "max-abs" => Ok(ScalerKind::MaxAbs),
            "z_score" | "z-score" | "zscore" => Ok(ScalerKind::ZScore),
            other => Err(format!("unknown scaler `{other}`")),
        }
    }
}

/// Per-variable affine scaling `(x − offset) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    /// Fits on `rows` of `series` only. Constant variables get scale 1.
    pub fn fit(kind: ScalerKind, series: &SeriesMatrix, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() || rows.end > series.rows() {
            return Err(Error::Data(format!("cannot fit scaler on rows {rows:?}")));
        }
        let n = rows.len() as f64;
        let mut offset = Vec::with_capacity(series.cols());
        let mut scale = Vec::with_capacity(series.cols());
        for i in 0..series.cols() {
            let col = rows.clone().map(|t| series.get(t, i));
            let (o, s) = match kind {
                ScalerKind::MaxAbs => (0.0, col.fold(0.0f64, |m, v| m.max(v.abs()))),
                ScalerKind::ZScore => {
                    let mean = col.clone().sum::<f64>() / n;
                    let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
            };
            offset.push(o);
            scale.push(if s > 0.0 { s } else { 1.0 });
        }
        Ok(Scaler { kind, offset, scale })
    }

    fn check(&self, series: &SeriesMatrix) -> Result<()> {
        if series.cols() != self.scale.len() {
            return Err(Error::Data(format!(
                "scaler fit on {} variables applied to {}",
                self.scale.len(),
                series.cols()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, series: &SeriesMatrix) -> Result<SeriesMatrix> {
        self.check(series)?;
        let mut out = series.clone();
        let n = series.cols();
        for (k, v) in out.values.iter_mut().enumerate() {
            *v = (*v - self.offset[k % n]) / self.scale[k % n];
        }
        Ok(out)
    }

    pub fn inverse(&self, series: &SeriesMatrix) -> Result<SeriesMatrix> {
        self.check(series)?;
        let mut out = series.clone();
        let n = series.cols();
        for (k, v) in out.values.iter_mut().enumerate() {
            *v = *v * self.scale[k % n] + self.offset[k % n];
        }
        Ok(out)
    }

    /// Inverse transform of a tensor whose node axis is `node_axis`.
    pub fn inverse_tensor(&self, t: &Tensor, node_axis: usize) -> Result<Tensor> {
        let shape = t.shape();
        if shape.get(node_axis) != Some(&self.scale.len()) {
            return Err(Error::Data(format!(
                "tensor {shape:?} has no {}-variable axis at {node_axis}",
                self.scale.len()
            )));
        }
        let inner: usize = shape[node_axis + 1..].iter().product();
        let n = self.scale.len();
        let mut out = t.detached();
        for (k, v) in out.values_mut().iter_mut().enumerate() {
            let i = (k / inner) % n;
            *v = *v * self.scale[i] + self.offset[i];
        }
        Ok(out)
    }
}

/// Source rows of one forecasting sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub input: Range<usize>,
    pub target: Range<usize>,
}

/// Every window whose input and target lie inside `rows`.
/// Returns an empty list (with a warning) when the range is too short.
pub fn make_windows(rows: Range<usize>, input_len: usize, horizon: usize, mode: Mode) -> Vec<Window> {
    let need = input_len + horizon;
    if input_len == 0 || horizon == 0 || rows.len() < need {
        log::warn!(
            "{} rows cannot hold a window of {input_len} inputs and horizon {horizon}",
            rows.len()
        );
        return Vec::new();
    }
    (rows.start..=rows.end - need)
        .map(|t| Window {
            input: t..t + input_len,
            target: match mode {
                Mode::SingleStep => t + input_len + horizon - 1..t + input_len + horizon,
                Mode::MultiStep => t + input_len..t + input_len + horizon,
            },
        })
        .collect()
}

/// Inputs `[B, N, 1, T]` and targets `[B, N, 1]` or `[B, N, 1, H]`.
pub fn gather_batch(series: &SeriesMatrix, windows: &[&Window], mode: Mode) -> Result<(Tensor, Tensor)> {
    let Some(first) = windows.first() else {
        return contract_err("cannot gather an empty batch");
    };
    let (b, n) = (windows.len(), series.cols());
    let (t_len, h_len) = (first.input.len(), first.target.len());
    let mut x = Vec::with_capacity(b * n * t_len);
    let mut y = Vec::with_capacity(b * n * h_len);
    for w in windows {
        if w.input.len() != t_len || w.target.len() != h_len || w.target.end > series.rows() {
            return contract_err(format!("window {w:?} inconsistent with the batch"));
        }
        for i in 0..n {
            x.extend(w.input.clone().map(|t| series.get(t, i)));
        }
        for i in 0..n {
            y.extend(w.target.clone().map(|t| series.get(t, i)));
        }
    }
    let target_shape = match mode {
        Mode::SingleStep => vec![b, n, 1],
        Mode::MultiStep => vec![b, n, 1, h_len],
    };
    Ok((Tensor::new(vec![b, n, 1, t_len], x)?, Tensor::new(target_shape, y)?))
}

/// Scaled series plus the windows of each split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub raw: SeriesMatrix,
    pub scaled: SeriesMatrix,
    pub scaler: Scaler,
    pub split: Split,
    pub mode: Mode,
    pub input_len: usize,
    pub horizon: usize,
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
}

impl Dataset {
    pub fn prepare(
        raw: SeriesMatrix,
        fractions: [f64; 3],
        scaler: ScalerKind,
        input_len: usize,
        horizon: usize,
        mode: Mode,
    ) -> Result<Self> {
        let split = split_chronological(raw.rows(), fractions)?;
        let scaler = Scaler::fit(scaler, &raw, split.train.clone())?;
        Self::with_scaler(raw, split, scaler, input_len, horizon, mode)
    }

    pub fn with_scaler(
        raw: SeriesMatrix,
        split: Split,
        scaler: Scaler,
        input_len: usize,
        horizon: usize,
        mode: Mode,
    ) -> Result<Self> {
        let scaled = scaler.transform(&raw)?;
        let windows = |r: &Range<usize>| make_windows(r.clone(), input_len, horizon, mode);
        let (train, val, test) = (windows(&split.train), windows(&split.val), windows(&split.test));
        for (name, w) in [("train", &train), ("validation", &val), ("test", &test)] {
            if w.is_empty() {
                return Err(Error::Data(format!(
                    "{name} split too short for input length {input_len} and horizon {horizon}"
                )));
            }
        }
        Ok(Dataset {
            raw,
            scaled,
            scaler,
            split,
            mode,
            input_len,
            horizon,
            train,
            val,
            test,
        })
    }

    pub fn nodes(&self) -> usize {
        self.raw.cols()
    }

    pub fn batch(&self, windows: &[&Window]) -> Result<(Tensor, Tensor)> {
        gather_batch(&self.scaled, windows, self.mode)
    }
}

/// Parameters of the coupled-lag chain generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub nodes: usize,
    pub steps: usize,
    pub lag: usize,
    pub noise: f64,
    pub seed: u64,
    /// Coupling `a` from the upstream variable.
    pub coupling: f64,
    /// Amplitude `b` of each variable's own sinusoid.
    pub drive: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            nodes: 5,
            steps: 2000,
            lag: 1,
            noise: 0.05,
            seed: 7,
            coupling: 0.9,
            drive: 0.3,
        }
    }
}

/// Directed edge `source → target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
}

/// `x_0` is a mixture of two sinusoids; `x_i(t) = a·x_{i−1}(t−lag) + b·sin(ω_i t) + ε`
/// with `ε ~ N(0, noise²)`. Returns the series and the chain edges `i−1 → i`.
pub fn synth_generate(p: &SynthParams) -> Result<(SeriesMatrix, Vec<Edge>)> {
    if p.nodes < 2 || p.steps == 0 {
        return contract_err(format!(
            "generator needs N >= 2 and S >= 1, got N={}, S={}",
            p.nodes, p.steps
        ));
    }
    if !(p.noise >= 0.0 && p.noise.is_finite()) {
        return contract_err(format!("noise must be non-negative, got {}", p.noise));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let phases: [f64; 2] = [rng.random::<f64>() * 2.0 * PI, rng.random::<f64>() * 2.0 * PI];
    let omegas: Vec<f64> = (0..p.nodes).map(|_| 2.0 * PI / rng.random_range(6.0..18.0)).collect();
    // series i needs i·lag steps of history before t = 0
    let burn = p.lag * (p.nodes - 1);
    let len = p.steps + burn;
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p.nodes);
    let base: Vec<f64> = (0..len)
        .map(|k| {
            let t = k as f64 - burn as f64;
            (2.0 * PI * t / 12.0 + phases[0]).sin() + 0.5 * (2.0 * PI * t / 5.0 + phases[1]).sin()
        })
        .collect();
    cols.push(base);
    for i in 1..p.nodes {
        let prev = &cols[i - 1];
        let col: Vec<f64> = (0..len)
            .map(|k| {
                let t = k as f64 - burn as f64;
                let upstream = if k >= p.lag { prev[k - p.lag] } else { 0.0 };
                p.coupling * upstream + p.drive * (omegas[i] * t).sin() + p.noise * normal.sample(&mut rng)
            })
            .collect();
        cols.push(col);
    }
    let mut values = Vec::with_capacity(p.steps * p.nodes);
    for k in burn..len {
        values.extend(cols.iter().map(|c| c[k]));
    }
    let series = SeriesMatrix::new(p.steps, p.nodes, values)?;
    let edges = (1..p.nodes)
        .map(|i| Edge {
            source: i - 1,
            target: i,
        })
        .collect();
    Ok((series, edges))
}

/// Pearson correlation of `x[t − lag]` with `y[t]`.
pub fn lagged_correlation(x: &[f64], y: &[f64], lag: usize) -> f64 {
    let n = x.len().min(y.len());
    if n <= lag + 1 {
        return 0.0;
    }
    let a = &x[..n - lag];
    let b = &y[lag..n];
    let m = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / m, b.iter().sum::<f64>() / m);
    let cov: f64 = a.iter().zip(b).map(|(u, v)| (u - ma) * (v - mb)).sum();
    let va: f64 = a.iter().map(|u| (u - ma) * (u - ma)).sum();
    let vb: f64 = b.iter().map(|v| (v - mb) * (v - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
