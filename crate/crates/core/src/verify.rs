//! Numerical verification harness.
//!
//! Every check runs on seeded random instances and compares the
//! differentiable implementation with an independent oracle: K-hop matrix
//! powers, the heat-kernel solution `e^{−tL}·H0`, the Euler a-priori error
//! bound, plain-loop convolution stacks, and central finite differences.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::data::{synth_generate, Dataset, ScalerKind, SynthParams};
use crate::error::{contract_err, Result};
use crate::gradcheck;
use crate::graph::{
    cgp_trajectory, euler_error_bound, heat_kernel_oracle, laplacian_spectral_norm, normalize_adjacency,
    symmetric_normalize, GraphLearnerParams,
};
use crate::model::{tiny_config, Ablation, Mode, Model, ModelConfig, ParamGroup, Phase};
use crate::ode::{integrate, Method, SolverSpec};
use crate::reference;
use crate::temporal::{cta_field_plain, receptive_field, CtaSchedule, TcnParams};
use crate::tensor::Tensor;
use crate::train::{evaluate_report, persistence_metrics, train, TrainConfig, TrainHistory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Cgp,
    Cta,
    Gradients,
    Oversmoothing,
    Bound,
    Synthetic,
    All,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cgp" => Ok(Suite::Cgp),
            "cta" => Ok(Suite::Cta),
            "gradients" => Ok(Suite::Gradients),
            "oversmoothing" => Ok(Suite::Oversmoothing),
            "bound" => Ok(Suite::Bound),
            "synthetic" => Ok(Suite::Synthetic),
            "all" => Ok(Suite::All),
            other => Err(format!(
                "unknown suite `{other}` (cgp|cta|gradients|oversmoothing|bound|synthetic|all)"
            )),
        }
    }
}

/// Outcome of one check: the measured value and the condition it must meet.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub measured: f64,
    pub condition: String,
    pub pass: bool,
    pub seconds: f64,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<13} {:<58} measured {:<12.4e} required {} ({:.2}s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.measured,
            self.condition,
            self.seconds
        )
    }
}

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Timer(Instant::now())
    }

    fn check(
        &self,
        suite: &'static str,
        name: impl Into<String>,
        measured: f64,
        condition: impl Into<String>,
        pass: bool,
    ) -> Check {
        Check {
            suite,
            name: name.into(),
            measured,
            condition: condition.into(),
            pass,
            seconds: self.0.elapsed().as_secs_f64(),
        }
    }

    fn at_most(&self, suite: &'static str, name: impl Into<String>, measured: f64, limit: f64) -> Check {
        self.check(suite, name, measured, format!("<= {limit:e}"), measured <= limit)
    }
}

pub fn run(suite: Suite) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Cgp | Suite::All) {
        out.extend(khop_equivalence()?);
        out.extend(convergence_orders()?);
        out.push(learner_structure(100)?);
    }
    if matches!(suite, Suite::Cta | Suite::All) {
        out.extend(temporal_equivalence()?);
        out.extend(encoder_equivalence()?);
        out.extend(receptive_field_ledger()?);
        out.extend(parameter_audit()?);
    }
    if matches!(suite, Suite::Gradients | Suite::All) {
        out.extend(gradient_integrity()?);
    }
    if matches!(suite, Suite::Oversmoothing | Suite::All) {
        out.extend(oversmoothing()?);
    }
    if matches!(suite, Suite::Bound | Suite::All) {
        out.push(euler_bound(20)?);
    }
    if matches!(suite, Suite::Synthetic | Suite::All) {
        out.extend(synthetic_forecasting(1)?);
    }
    Ok(out)
}

/// Non-negative random adjacency with zero diagonal; each edge present with
/// probability `density` and weight in `(0, max_weight]`.
pub fn random_graph<R: Rng + ?Sized>(n: usize, density: f64, max_weight: f64, symmetric: bool, rng: &mut R) -> Tensor {
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let start = if symmetric { i + 1 } else { 0 };
        for j in start..n {
            if i == j || rng.random::<f64>() >= density {
                continue;
            }
            let w = max_weight * (1.0 - rng.random::<f64>());
            a.set(&[i, j], w);
            if symmetric {
                a.set(&[j, i], w);
            }
        }
    }
    a
}

fn rand_states<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..=1.0))
}

fn row_normalized(adj: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    Ok(normalize_adjacency(tape.constant(adj.detached()))?.value())
}

/// Euler diffusion on a fixed operator, returning every grid state.
pub fn diffuse(a_hat: &Tensor, h0: &Tensor, spec: &SolverSpec) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let a = tape.constant(a_hat.detached());
    let states = cgp_trajectory(tape.constant(h0.detached()), a, spec)?;
    Ok(states.iter().map(Var::value).collect())
}

/// Unit-step Euler diffusion against `Â^K·H0` on random graphs with `N ≤ 8`.
pub fn khop_equivalence() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut out = Vec::new();
    for k in [1usize, 2, 4, 8] {
        let t = Timer::start();
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let n = rng.random_range(2..=8);
            let a_hat = row_normalized(&random_graph(n, 0.5, 1.0, false, &mut rng))?;
            let h0 = rand_states(&[n, 3, 4], &mut rng);
            let spec = SolverSpec::euler(k as f64, 1.0)?;
            let euler = diffuse(&a_hat, &h0, &spec)?.pop().expect("non-empty");
            let oracle = reference::khop_propagate(&a_hat, &h0, k)?;
            worst = worst.max(euler.max_abs_diff(&oracle));
        }
        out.push(t.at_most("cgp", format!("unit-step Euler equals K-hop power, K={k}"), worst, 1e-9));
    }
    Ok(out)
}

/// Errors of diffusion at `T=1` against the heat kernel for each step count.
pub fn heat_kernel_errors(a_sym: &Tensor, h0: &Tensor, method: Method, steps: &[usize]) -> Result<Vec<f64>> {
    let exact = heat_kernel_oracle(a_sym, 1.0, h0)?;
    steps
        .iter()
        .map(|&k| {
            let spec = SolverSpec::new(method, 1.0, 1.0 / k as f64)?;
            Ok(diffuse(a_sym, h0, &spec)?
                .pop()
                .expect("non-empty")
                .max_abs_diff(&exact))
        })
        .collect()
}

/// First-order (Euler) and fourth-order (RK4) convergence towards the heat kernel.
pub fn convergence_orders() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut out = Vec::new();
    // Euler on a generic connected graph
    let t = Timer::start();
    let a_sym = symmetric_normalize(&random_graph(6, 0.6, 1.0, true, &mut rng))?;
    let h0 = rand_states(&[6, 2, 3], &mut rng);
    let errs = heat_kernel_errors(&a_sym, &h0, Method::Euler, &[4, 8, 16, 32])?;
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    out.push(t.check(
        "cgp",
        "Euler error decreases with K (4..32, T=1)",
        errs[3],
        "strictly decreasing",
        monotone,
    ));
    for (i, w) in errs.windows(2).enumerate() {
        let ratio = w[0] / w[1];
        let ks = [4, 8, 16, 32];
        out.push(t.check(
            "cgp",
            format!("Euler error ratio K={}->{}", ks[i], ks[i + 1]),
            ratio,
            "2 ± 0.2",
            (ratio - 2.0).abs() <= 0.2,
        ));
    }
    // RK4 in its asymptotic regime needs ‖L‖ well inside the stability region at K=2
    let t = Timer::start();
    let a_weak = symmetric_normalize(&random_graph(6, 0.8, 0.1, true, &mut rng))?;
    let norm = laplacian_spectral_norm(&a_weak)?;
    let errs = heat_kernel_errors(&a_weak, &h0, Method::Rk4, &[2, 4, 8])?;
    for (i, w) in errs.windows(2).enumerate() {
        let ratio = w[0] / w[1];
        let ks = [2, 4, 8];
        out.push(t.check(
            "cgp",
            format!("RK4 error ratio K={}->{} (||L||={norm:.3})", ks[i], ks[i + 1]),
            ratio,
            "16 ± 3",
            (ratio - 16.0).abs() <= 3.0,
        ));
    }
    Ok(out)
}

/// Zero diagonal, entries in `[0, 1)` and `A_ij·A_ji = 0` over random draws.
pub fn learner_structure(draws: usize) -> Result<Check> {
    let t = Timer::start();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut violations = 0usize;
    for _ in 0..draws {
        let n = rng.random_range(2..=10);
        let d = rng.random_range(1..=6);
        let beta = rng.random_range(0.5..5.0);
        let p = GraphLearnerParams::random(n, d, beta, &mut rng)?;
        let a = p.adjacency()?;
        for i in 0..n {
            for j in 0..n {
                let v = a.get(&[i, j]);
                let bad = !(0.0..1.0).contains(&v) || (i == j && v != 0.0) || v * a.get(&[j, i]) != 0.0;
                violations += usize::from(bad);
            }
        }
    }
    Ok(t.check(
        "cgp",
        format!("learned graph structure over {draws} draws (violations)"),
        violations as f64,
        "= 0",
        violations == 0,
    ))
}

/// Unit-step Euler temporal aggregation against the padded residual stack
/// with tied parameters.
pub fn temporal_equivalence() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut out = Vec::new();
    for k in [1usize, 2, 3] {
        let t = Timer::start();
        let mut worst: f64 = 0.0;
        for r in [1usize, 2] {
            let widths = [2, 3];
            let spec = SolverSpec::euler(k as f64, 1.0)?;
            let schedule = CtaSchedule::new(r, spec, &widths)?;
            let tcn = TcnParams::random(4, &widths, &mut rng)?;
            let h0 = rand_states(&[3, 4, schedule.receptive_field], &mut rng);
            let tape = Tape::new();
            let bound = tcn.bind(&tape);
            let cont = integrate(
                |h: &Var<'_>, step| cta_field_plain(*h, step, &bound, &schedule),
                tape.constant(h0.clone()),
                &spec,
            )?
            .value();
            let layers: Vec<&TcnParams> = vec![&tcn; k];
            let disc = reference::padded_residual_stack(&h0, &layers, r, None)?;
            worst = worst.max(cont.max_abs_diff(&disc));
        }
        out.push(t.at_most(
            "cta",
            format!("unit-step Euler equals residual stack, K={k}"),
            worst,
            1e-9,
        ));
    }
    Ok(out)
}

fn unit_step_config(k_cta: usize, k_cgp: usize) -> Result<ModelConfig> {
    Ok(ModelConfig {
        nodes: 4,
        input_dim: 2,
        hidden_dim: 4,
        input_len: 5,
        dilation_factor: 2,
        cta: SolverSpec::euler(k_cta as f64, 1.0)?,
        cgp: SolverSpec::euler(k_cgp as f64, 1.0)?,
        topk: 3,
        ..tiny_config()
    })
}

/// The full encoder with unit steps against the plain-loop discrete encoder.
pub fn encoder_equivalence() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let t = Timer::start();
    let mut worst_cont: f64 = 0.0;
    let mut worst_disc: f64 = 0.0;
    for seed in 0..3u64 {
        let cfg = unit_step_config(3, 2)?;
        let x = rand_states(&[2, cfg.nodes, cfg.input_dim, cfg.input_len], &mut rng);

        let cont = Model::new(cfg.clone(), seed)?;
        let tied: Vec<&TcnParams> = vec![&cont.params.tcn[0]; 3];
        let oracle = reference::discrete_encoder(&cont, &x, &tied)?;
        worst_cont = worst_cont.max(cont.encode_value(&x)?.max_abs_diff(&oracle));

        let disc = Model::new(
            ModelConfig {
                ablation: Ablation {
                    fully_discrete: true,
                    ..Ablation::default()
                },
                ..cfg
            },
            seed,
        )?;
        let layers: Vec<&TcnParams> = disc.params.tcn.iter().collect();
        let oracle = reference::discrete_encoder(&disc, &x, &layers)?;
        worst_disc = worst_disc.max(disc.encode_value(&x)?.max_abs_diff(&oracle));
    }
    out.push(t.at_most(
        "cta",
        "unit-step nested encoder equals discrete stack (tied)",
        worst_cont,
        1e-9,
    ));
    out.push(t.at_most("cta", "fully discrete encoder equals discrete stack", worst_disc, 1e-9));
    Ok(out)
}

/// Receptive-field values and the informative length left after a forward pass.
pub fn receptive_field_ledger() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for ((r, k, l), expected) in [((1, 2, 5), 6), ((2, 2, 5), 32), ((2, 7, 3), 43)] {
        let t = Timer::start();
        let got = receptive_field(r, k, l);
        let cfg = ModelConfig {
            input_len: got - 1,
            dilation_factor: r,
            widths: if k == 2 { vec![2] } else { vec![2, k] },
            hidden_dim: if k == 2 { 2 } else { 4 },
            cta: SolverSpec::euler(l as f64, 1.0)?,
            ..tiny_config()
        };
        let model = Model::new(cfg.clone(), 1)?;
        let x = Tensor::zeros(&[1, cfg.nodes, cfg.input_dim, cfg.input_len]);
        let forward_ok = model.encode_value(&x).is_ok();
        let remaining = model.schedule().informative_length_after(l);
        out.push(t.check(
            "cta",
            format!("receptive field (r={r}, k={k}, L={l}) and informative length"),
            got as f64,
            format!("= {expected}, length 1"),
            got == expected && remaining == Some(1) && forward_ok,
        ));
    }
    Ok(out)
}

/// Parameter counts of the discrete and continuous temporal encoders for
/// depths `K = 2..=5`, excluding the attentive maps.
pub fn parameter_counts() -> Result<Vec<(usize, usize, usize)>> {
    (2..=5)
        .map(|k| {
            let cfg = ModelConfig {
                input_len: 4,
                cta: SolverSpec::euler(k as f64, 1.0)?,
                ..tiny_config()
            };
            let cont = Model::new(cfg.clone(), 0)?.parameter_count().core;
            let disc_cfg = ModelConfig {
                ablation: Ablation {
                    no_cta: true,
                    ..Ablation::default()
                },
                ..cfg
            };
            let disc = Model::new(disc_cfg, 0)?.parameter_count().core;
            Ok((k, cont, disc))
        })
        .collect()
}

pub fn parameter_audit() -> Result<Vec<Check>> {
    let t = Timer::start();
    let counts = parameter_counts()?;
    let exceeds = counts.iter().all(|(_, c, d)| d > c);
    let constant = counts.windows(2).all(|w| w[0].1 == w[1].1);
    let increments: Vec<usize> = counts.windows(2).map(|w| w[1].2 - w[0].2).collect();
    let linear = increments.windows(2).all(|w| w[0] == w[1]) && increments[0] > 0;
    let (k_last, c_last, d_last) = *counts.last().expect("non-empty");
    Ok(vec![
        t.check(
            "cta",
            format!("discrete count exceeds continuous (K=2..{k_last})"),
            d_last as f64 / c_last as f64,
            "> 1 at every K",
            exceeds,
        ),
        t.check(
            "cta",
            "continuous count constant, discrete linear in K",
            increments[0] as f64,
            "equal increments",
            constant && linear,
        ),
    ])
}

/// Concatenated analytic and numeric gradients of one parameter group.
fn group_error(model: &Model, cmp: &[gradcheck::GradComparison], group: ParamGroup) -> Option<f64> {
    let mut joined = gradcheck::GradComparison {
        analytic: Vec::new(),
        numeric: Vec::new(),
    };
    for ((_, g, _), c) in model.params.named().into_iter().zip(cmp) {
        if g == group {
            joined.analytic.extend(&c.analytic);
            joined.numeric.extend(&c.numeric);
        }
    }
    (!joined.analytic.is_empty()).then(|| joined.relative_error(1e-10))
}

/// End-to-end gradients of the MAE loss on a tiny model against central differences.
pub fn gradient_integrity() -> Result<Vec<Check>> {
    let t = Timer::start();
    let cfg = ModelConfig {
        cta: SolverSpec::euler(2.0, 1.0)?,
        cgp: SolverSpec::euler(1.0, 0.5)?,
        ..tiny_config()
    };
    let model = Model::new(cfg.clone(), 606)?;
    let mut rng = ChaCha8Rng::seed_from_u64(607);
    let x = rand_states(&[2, cfg.nodes, cfg.input_dim, cfg.input_len], &mut rng);
    // targets far from the predictions keep |pred − target| away from its kink
    let y = rand_states(&[2, cfg.nodes, cfg.input_dim], &mut rng).map(|v| v + 5.0);
    let inputs: Vec<Tensor> = model.params.tensors().into_iter().cloned().collect();
    let cmp = gradcheck::compare(&inputs, 1e-6, |tape, vars| {
        let bound = model.bind_vars(tape, vars.to_vec())?;
        let pred = model.forward(tape.constant(x.clone()), &bound, &mut Phase::Eval)?;
        crate::model::loss_mae(pred, tape.constant(y.clone()))
    })?;
    let mut out = Vec::new();
    for group in [
        ParamGroup::Theta,
        ParamGroup::Phi,
        ParamGroup::StartConv,
        ParamGroup::GraphLearner,
        ParamGroup::Decoder,
    ] {
        let Some(err) = group_error(&model, &cmp, group) else {
            return contract_err(format!("parameter group {} is empty", group.name()));
        };
        out.push(t.at_most(
            "gradients",
            format!("relative gradient error, group {}", group.name()),
            err,
            1e-3,
        ));
    }
    let learner_norm: f64 = model
        .params
        .named()
        .into_iter()
        .zip(&cmp)
        .filter(|((_, g, _), _)| *g == ParamGroup::GraphLearner)
        .flat_map(|(_, c)| c.analytic.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    out.push(t.check(
        "gradients",
        "graph learner receives gradient through nested ODEs",
        learner_norm,
        "> 0",
        learner_norm > 0.0,
    ));
    Ok(out)
}

/// Sum over features and time of the variance across nodes.
pub fn node_variance(h: &Tensor) -> f64 {
    let s = h.shape();
    let (n, inner) = (s[s.len() - 3], s[s.len() - 2] * s[s.len() - 1]);
    let outer = h.len() / (n * inner);
    let mut total = 0.0;
    for o in 0..outer {
        for i in 0..inner {
            let vals: Vec<f64> = (0..n).map(|r| h.values()[(o * n + r) * inner + i]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            total += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        }
    }
    total
}

/// Ring of `n` nodes with unit edge weights.
pub fn ring_graph(n: usize) -> Tensor {
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        a.set(&[i, (i + 1) % n], 1.0);
        a.set(&[(i + 1) % n, i], 1.0);
    }
    a
}

/// Depth-64 propagation with unit steps against the same depth at fixed `T = 1`.
pub fn oversmoothing() -> Result<Vec<Check>> {
    let t = Timer::start();
    let a_sym = symmetric_normalize(&ring_graph(8))?;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let h0 = rand_states(&[8, 2, 2], &mut rng);
    let v0 = node_variance(&h0);
    let unit = diffuse(&a_sym, &h0, &SolverSpec::euler(64.0, 1.0)?)?
        .pop()
        .expect("non-empty");
    let fixed = diffuse(&a_sym, &h0, &SolverSpec::euler(1.0, 1.0 / 64.0)?)?
        .pop()
        .expect("non-empty");
    let oracle = heat_kernel_oracle(&a_sym, 1.0, &h0)?;
    let collapsed = node_variance(&unit) / v0;
    let retained = node_variance(&fixed) / v0;
    Ok(vec![
        t.at_most("oversmoothing", "unit-step depth 64: variance ratio", collapsed, 1e-3),
        t.check(
            "oversmoothing",
            "fixed T=1 depth 64: variance ratio",
            retained,
            "> 1e-1",
            retained > 0.1,
        ),
        t.at_most(
            "oversmoothing",
            "fixed T=1 depth 64: distance to heat kernel",
            fixed.max_abs_diff(&oracle),
            1e-2,
        ),
    ])
}

/// Empirical Euler error against the a-priori bound on random symmetric graphs.
pub fn euler_bound(seeds: u64) -> Result<Check> {
    let t = Timer::start();
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let n = rng.random_range(3..=8);
        let a_sym = symmetric_normalize(&random_graph(n, 0.6, 1.0, true, &mut rng))?;
        let h0 = rand_states(&[n, 2, 3], &mut rng);
        let k = [2usize, 4, 8, 16][rng.random_range(0..4)];
        let time = rng.random_range(0.5..2.0);
        let spec = SolverSpec::euler(time, time / k as f64)?;
        let approx = diffuse(&a_sym, &h0, &spec)?.pop().expect("non-empty");
        let exact = heat_kernel_oracle(&a_sym, time, &h0)?;
        let diff = approx
            .values()
            .iter()
            .zip(exact.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let bound = euler_error_bound(time, laplacian_spectral_norm(&a_sym)?, h0.frobenius_norm(), k);
        worst_ratio = worst_ratio.max(diff / bound);
    }
    Ok(t.at_most(
        "bound",
        format!("Euler error / a-priori bound, worst of {seeds} instances"),
        worst_ratio,
        1.0,
    ))
}

/// Result of training on the synthetic lagged chain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticOutcome {
    pub test_rse: f64,
    pub persistence_rse: f64,
    /// Mean learned weight `A[target, source]` over the true chain edges.
    pub chain_mean: f64,
    /// Mean learned weight over every other off-diagonal entry.
    pub null_mean: f64,
    pub history: TrainHistory,
}

/// Model used for the synthetic chain: `R = 43 > T = 24`.
pub fn synthetic_config() -> Result<ModelConfig> {
    Ok(ModelConfig {
        nodes: 5,
        input_dim: 1,
        hidden_dim: 16,
        input_len: 24,
        horizon: 1,
        mode: Mode::SingleStep,
        dilation_factor: 2,
        widths: vec![2, 3, 6, 7],
        cta: SolverSpec::euler(3.0, 1.0)?,
        cgp: SolverSpec::euler(1.0, 0.5)?,
        topk: 20,
        beta: 3.0,
        embed_dim: 8,
        dropout: 0.0,
        decoder_hidden: 16,
        ablation: Ablation::default(),
    })
}

/// Trains for 5 epochs on the default 5-node chain and measures forecast
/// accuracy and graph recovery on the test split.
pub fn synthetic_experiment(model_seed: u64) -> Result<SyntheticOutcome> {
    let (series, edges) = synth_generate(&SynthParams::default())?;
    let data = Dataset::prepare(series, [0.6, 0.2, 0.2], ScalerKind::MaxAbs, 24, 1, Mode::SingleStep)?;
    let mut model = Model::new(synthetic_config()?, model_seed)?;
    let run = TrainConfig {
        epochs: 5,
        batch_size: 16,
        lr: 3e-3,
        seed: model_seed,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &data, &run)?;
    let report = evaluate_report(&model, &data, "test", &[1], None)?;
    let test_rse = report.rows[0].rse.expect("single-step report has RSE");
    let persistence_rse = persistence_metrics(&data, &data.test)?.rse;

    let a = model.adjacency()?.raw;
    let n = data.nodes();
    let is_edge = |i: usize, j: usize| edges.iter().any(|e| e.target == i && e.source == j);
    let (mut chain, mut null) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            if is_edge(i, j) {
                chain.push(a.get(&[i, j]));
            } else {
                null.push(a.get(&[i, j]));
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SyntheticOutcome {
        test_rse,
        persistence_rse,
        chain_mean: mean(&chain),
        null_mean: mean(&null),
        history,
    })
}

pub fn synthetic_forecasting(model_seed: u64) -> Result<Vec<Check>> {
    let t = Timer::start();
    let o = synthetic_experiment(model_seed)?;
    let ratio = o.test_rse / o.persistence_rse;
    Ok(vec![
        t.at_most(
            "synthetic",
            format!(
                "test RSE / persistence RSE ({:.4} / {:.4})",
                o.test_rse, o.persistence_rse
            ),
            ratio,
            0.8,
        ),
        t.check(
            "synthetic",
            format!(
                "chain edge mean minus null edge mean ({:.4} vs {:.4})",
                o.chain_mean, o.null_mean
            ),
            o.chain_mean - o.null_mean,
            "> 0",
            o.chain_mean > o.null_mean,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_parse() {
        assert_eq!("bound".parse::<Suite>().unwrap(), Suite::Bound);
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn ring_variance_of_constant_is_zero() {
        let h = Tensor::full(&[8, 1, 1], 3.0);
        assert_eq!(node_variance(&h), 0.0);
        let a = symmetric_normalize(&ring_graph(8)).unwrap();
        assert!((a.get(&[0, 1]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn random_graph_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_graph(5, 1.0, 0.5, true, &mut rng);
        for i in 0..5 {
            assert_eq!(a.get(&[i, i]), 0.0);
            for j in 0..5 {
                assert_eq!(a.get(&[i, j]), a.get(&[j, i]));
                assert!(a.get(&[i, j]) <= 0.5);
            }
        }
    }
}
