//! The full forecaster: start convolution, learned graph, nested temporal and
//! graph ODEs, and a two-layer decoder.
//!
//! The exterior (temporal) vector field at aggregation step `i` is
//!
//! ```text
//! f(H, i) = P( Σ_j G(t_j)·Φ_j , R ),   G = graph-ODE trajectory from TCN(H, δ_i)
//! ```
//!
//! where `P` left-pads to the receptive field `R`. The encoder output is the
//! last time slot of the exterior ODE's terminal state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{feature_map, mae, Tape, Var};
use crate::error::{contract_err, dim_err, Result};
use crate::graph::{
    attentive_sum, cgp_trajectory, khop_trajectory, learn_adjacency, normalize_adjacency, sparsify_topk, Adjacency,
    GraphLearnerParams,
};
use crate::ode::{integrate, SolverSpec};
use crate::temporal::{gated_tcn, receptive_field, ConvParams, ConvVars, CtaSchedule, TcnParams, TcnVars};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SingleStep,
    MultiStep,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single_step" | "single-step" | "single" => Ok(Mode::SingleStep),
            "multi_step" | "multi-step" | "multi" => Ok(Mode::MultiStep),
            other => Err(format!("unknown forecasting mode `{other}`")),
        }
    }
}

/// Ablation switches; at most one may be set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Discrete K-hop propagation instead of the graph ODE.
    pub no_cgp: bool,
    /// Discrete residual convolution stack with per-layer parameters.
    pub no_cta: bool,
    /// Fixed random row-stochastic adjacency instead of the learner.
    pub no_gsl: bool,
    /// Final-state linear map instead of the attentive sum.
    pub no_attn: bool,
    /// Both `no_cgp` and `no_cta`.
    pub fully_discrete: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 5] = ["no_cgp", "no_cta", "no_gsl", "no_attn", "fully_discrete"];

    pub fn parse(name: &str) -> Result<Self> {
        let mut a = Ablation::default();
        match name {
            "" | "none" | "continuous" => {}
            "no_cgp" => a.no_cgp = true,
            "no_cta" => a.no_cta = true,
            "no_gsl" => a.no_gsl = true,
            "no_attn" => a.no_attn = true,
            "fully_discrete" => a.fully_discrete = true,
            other => return contract_err(format!("unknown ablation `{other}`")),
        }
        Ok(a)
    }

    fn flags(&self) -> [bool; 5] {
        [self.no_cgp, self.no_cta, self.no_gsl, self.no_attn, self.fully_discrete]
    }

    pub fn validate(&self) -> Result<()> {
        let set: Vec<&str> = Self::NAMES
            .iter()
            .zip(self.flags())
            .filter(|(_, f)| *f)
            .map(|(n, _)| *n)
            .collect();
        if set.len() > 1 {
            return contract_err(format!("ablation flags {set:?} cannot be combined; pick one"));
        }
        Ok(())
    }

    /// Report tag: `continuous` or the single flag that is set.
    pub fn variant_name(&self) -> &'static str {
        Self::NAMES
            .iter()
            .zip(self.flags())
            .find(|(_, f)| *f)
            .map(|(n, _)| *n)
            .unwrap_or("continuous")
    }

    pub fn discrete_spatial(&self) -> bool {
        self.no_cgp || self.fully_discrete
    }

    pub fn discrete_temporal(&self) -> bool {
        self.no_cta || self.fully_discrete
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub nodes: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub input_len: usize,
    pub horizon: usize,
    pub mode: Mode,
    pub dilation_factor: usize,
    pub widths: Vec<usize>,
    pub cta: SolverSpec,
    pub cgp: SolverSpec,
    pub topk: usize,
    pub beta: f64,
    pub embed_dim: usize,
    pub dropout: f64,
    pub decoder_hidden: usize,
    #[serde(default)]
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return contract_err(format!("need at least 2 variables, got {}", self.nodes));
        }
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("input_len", self.input_len),
            ("horizon", self.horizon),
            ("embed_dim", self.embed_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("topk", self.topk),
        ] {
            if v == 0 {
                return contract_err(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return contract_err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return contract_err(format!("beta must be non-negative, got {}", self.beta));
        }
        self.ablation.validate()?;
        self.cgp.steps()?;
        let schedule = self.schedule()?;
        if !self.hidden_dim.is_multiple_of(self.widths.len()) {
            return contract_err(format!(
                "hidden_dim {} is not divisible by {} kernel widths",
                self.hidden_dim,
                self.widths.len()
            ));
        }
        if schedule.receptive_field <= self.input_len {
            return contract_err(format!(
                "receptive field {} must exceed input length {} (raise cta steps or dilation)",
                schedule.receptive_field, self.input_len
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<CtaSchedule> {
        CtaSchedule::new(self.dilation_factor, self.cta, &self.widths)
    }

    pub fn receptive_field(&self) -> Result<usize> {
        let k_max = self.widths.iter().copied().max().unwrap_or(1);
        Ok(receptive_field(self.dilation_factor, k_max, self.cta.steps()?))
    }

    /// Output channels of the decoder per node.
    pub fn output_dim(&self) -> usize {
        match self.mode {
            Mode::SingleStep => self.input_dim,
            Mode::MultiStep => self.input_dim * self.horizon,
        }
    }

    /// Per-node output shape after the batch and node axes.
    pub fn output_tail(&self) -> Vec<usize> {
        match self.mode {
            Mode::SingleStep => vec![self.input_dim],
            Mode::MultiStep => vec![self.input_dim, self.horizon],
        }
    }

    /// `topk` clamped to the node count.
    pub fn effective_topk(&self) -> usize {
        self.topk.min(self.nodes)
    }
}

/// Parameter groups of the objective: Θ, Φ and the Γ family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Theta,
    Phi,
    StartConv,
    GraphLearner,
    Decoder,
}

impl ParamGroup {
    pub fn name(&self) -> &'static str {
        match self {
            ParamGroup::Theta => "theta",
            ParamGroup::Phi => "phi",
            ParamGroup::StartConv => "gamma_sc",
            ParamGroup::GraphLearner => "gamma_gc",
            ParamGroup::Decoder => "gamma_dc",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub start: ConvParams,
    pub graph: Option<GraphLearnerParams>,
    /// Non-trainable adjacency used by the `no_gsl` variant.
    pub fixed_adjacency: Option<Tensor>,
    /// One set for the continuous encoder, one per layer for the discrete stack.
    pub tcn: Vec<TcnParams>,
    pub attn: Vec<Tensor>,
    pub decoder: [ConvParams; 2],
}

/// Random row-stochastic matrix with entries drawn from U(0, 1).
pub fn random_row_stochastic<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    let mut a = Tensor::from_fn(&[n, n], |_| rng.random::<f64>());
    for i in 0..n {
        let s: f64 = a.values()[i * n..(i + 1) * n].iter().sum();
        a.values_mut()[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= s);
    }
    a
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d_hidden = config.hidden_dim;
        let start = ConvParams::random(d_hidden, config.input_dim, 1, rng);
        let (graph, fixed_adjacency) = if config.ablation.no_gsl {
            (None, Some(random_row_stochastic(config.nodes, rng)))
        } else {
            (
                Some(GraphLearnerParams::random(
                    config.nodes,
                    config.embed_dim,
                    config.beta,
                    rng,
                )?),
                None,
            )
        };
        let layers = if config.ablation.discrete_temporal() {
            config.cta.steps()?
        } else {
            1
        };
        let tcn = (0..layers)
            .map(|_| TcnParams::random(d_hidden, &config.widths, rng))
            .collect::<Result<Vec<_>>>()?;
        let attn = if config.ablation.no_attn {
            vec![Tensor::identity(d_hidden).with_grad()]
        } else {
            let k = config.cgp.steps()?;
            let scale = 1.0 / (k + 1) as f64;
            (0..=k)
                .map(|_| Tensor::identity(d_hidden).map(|v| v * scale).with_grad())
                .collect()
        };
        let decoder = [
            ConvParams::random(config.decoder_hidden, d_hidden, 1, rng),
            ConvParams::random(config.output_dim(), config.decoder_hidden, 1, rng),
        ];
        Ok(ModelParams {
            start,
            graph,
            fixed_adjacency,
            tcn,
            attn,
            decoder,
        })
    }

    /// Trainable tensors with names and groups, in binding order.
    pub fn named(&self) -> Vec<(String, ParamGroup, &Tensor)> {
        let mut out: Vec<(String, ParamGroup, &Tensor)> = Vec::new();
        out.push(("start.weight".into(), ParamGroup::StartConv, &self.start.weight));
        out.push(("start.bias".into(), ParamGroup::StartConv, &self.start.bias));
        if let Some(g) = &self.graph {
            for (n, t) in [("e1", &g.e1), ("e2", &g.e2), ("g1", &g.g1), ("g2", &g.g2)] {
                out.push((format!("graph.{n}"), ParamGroup::GraphLearner, t));
            }
        }
        for (l, layer) in self.tcn.iter().enumerate() {
            for (i, (f, g)) in layer.filter.iter().zip(&layer.gate).enumerate() {
                let m = layer.widths[i];
                out.push((format!("tcn.{l}.w{m}.filter.weight"), ParamGroup::Theta, &f.weight));
                out.push((format!("tcn.{l}.w{m}.filter.bias"), ParamGroup::Theta, &f.bias));
                out.push((format!("tcn.{l}.w{m}.gate.weight"), ParamGroup::Theta, &g.weight));
                out.push((format!("tcn.{l}.w{m}.gate.bias"), ParamGroup::Theta, &g.bias));
            }
        }
        for (i, p) in self.attn.iter().enumerate() {
            out.push((format!("attn.{i}"), ParamGroup::Phi, p));
        }
        for (i, d) in self.decoder.iter().enumerate() {
            out.push((format!("decoder.{i}.weight"), ParamGroup::Decoder, &d.weight));
            out.push((format!("decoder.{i}.bias"), ParamGroup::Decoder, &d.bias));
        }
        out
    }

    /// Mutable trainable tensors, in binding order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.start.tensors_mut());
        if let Some(g) = &mut self.graph {
            out.extend([&mut g.e1, &mut g.e2, &mut g.g1, &mut g.g2]);
        }
        for layer in &mut self.tcn {
            out.extend(layer.tensors_mut());
        }
        out.extend(self.attn.iter_mut());
        for d in &mut self.decoder {
            out.extend(d.tensors_mut());
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, _, t)| t).collect()
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn count(&self, group: Option<ParamGroup>) -> usize {
        self.named()
            .into_iter()
            .filter(|(_, g, _)| group.is_none_or(|want| *g == want))
            .map(|(_, _, t)| t.len())
            .sum()
    }
}

/// Parameters recorded on a tape, mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams<'t> {
    pub start: ConvVars<'t>,
    pub graph: Option<[Var<'t>; 4]>,
    pub fixed_adjacency: Option<Var<'t>>,
    pub tcn: Vec<TcnVars<'t>>,
    pub attn: Vec<Var<'t>>,
    pub decoder: [ConvVars<'t>; 2],
    /// All trainable variables in binding order.
    pub flat: Vec<Var<'t>>,
}

struct Cursor<'a, 't> {
    vars: &'a [Var<'t>],
    pos: usize,
}

impl<'t> Cursor<'_, 't> {
    fn next(&mut self) -> Var<'t> {
        self.pos += 1;
        self.vars[self.pos - 1]
    }

    fn conv(&mut self) -> ConvVars<'t> {
        ConvVars {
            weight: self.next(),
            bias: self.next(),
        }
    }
}

/// Training-time behaviour of a forward pass.
pub enum Phase<'a> {
    Eval,
    Train { rng: &'a mut ChaCha8Rng },
}

impl Phase<'_> {
    fn dropout<'t>(&mut self, x: Var<'t>, rate: f64) -> Result<Var<'t>> {
        match self {
            Phase::Train { rng } if rate > 0.0 => {
                let keep = 1.0 - rate;
                let shape = x.shape();
                let mask = Tensor::from_fn(&shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                x.mask(mask)
            }
            _ => Ok(x),
        }
    }
}

/// Parameter totals for the depth/parameter audits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterCount {
    /// Trainable parameters excluding the attentive maps.
    pub core: usize,
    pub attentive: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    schedule: CtaSchedule,
}

impl Model {
    /// Builds the variant selected by `config.ablation`, seeded.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&config, &mut rng)?;
        Self::from_parts(config, params)
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule()?;
        let fresh = ModelParams::init(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let expect: Vec<(String, Vec<usize>)> = fresh
            .named()
            .into_iter()
            .map(|(n, _, t)| (n, t.shape().to_vec()))
            .collect();
        let got: Vec<(String, Vec<usize>)> = params
            .named()
            .into_iter()
            .map(|(n, _, t)| (n, t.shape().to_vec()))
            .collect();
        if expect != got
            || fresh.fixed_adjacency.as_ref().map(|t| t.shape().to_vec())
                != params.fixed_adjacency.as_ref().map(|t| t.shape().to_vec())
        {
            return contract_err("parameter layout does not match the configuration");
        }
        Ok(Model {
            config,
            params,
            schedule,
        })
    }

    pub fn schedule(&self) -> &CtaSchedule {
        &self.schedule
    }

    pub fn variant_name(&self) -> &'static str {
        self.config.ablation.variant_name()
    }

    pub fn parameter_count(&self) -> ParameterCount {
        let attentive = self.params.count(Some(ParamGroup::Phi));
        ParameterCount {
            core: self.params.count(None) - attentive,
            attentive,
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        let flat: Vec<Var<'t>> = self.params.tensors().into_iter().map(|t| tape.param(t)).collect();
        self.bind_vars(tape, flat).expect("own parameters always bind")
    }

    /// Wraps already-recorded variables (in binding order) as model parameters.
    pub fn bind_vars<'t>(&self, tape: &'t Tape, flat: Vec<Var<'t>>) -> Result<BoundParams<'t>> {
        let expected = self.params.tensors().len();
        if flat.len() != expected {
            return contract_err(format!("expected {expected} parameter variables, got {}", flat.len()));
        }
        let mut cur = Cursor { vars: &flat, pos: 0 };
        let start = cur.conv();
        let graph = self
            .params
            .graph
            .as_ref()
            .map(|_| [cur.next(), cur.next(), cur.next(), cur.next()]);
        let mut tcn = Vec::with_capacity(self.params.tcn.len());
        for layer in &self.params.tcn {
            let mut filter = Vec::new();
            let mut gate = Vec::new();
            for _ in &layer.widths {
                filter.push(cur.conv());
                gate.push(cur.conv());
            }
            tcn.push(TcnVars {
                widths: layer.widths.clone(),
                filter,
                gate,
            });
        }
        let attn: Vec<Var<'t>> = self.params.attn.iter().map(|_| cur.next()).collect();
        let decoder = [cur.conv(), cur.conv()];
        let fixed_adjacency = self
            .params
            .fixed_adjacency
            .as_ref()
            .map(|a| tape.constant(a.detached()));
        Ok(BoundParams {
            start,
            graph,
            fixed_adjacency,
            tcn,
            attn,
            decoder,
            flat,
        })
    }

    /// `Â` for this forward pass: learned, sparsified and row-normalised, or the fixed matrix.
    pub fn normalized_adjacency<'t>(&self, bound: &BoundParams<'t>) -> Result<Var<'t>> {
        if let Some(a) = bound.fixed_adjacency {
            return Ok(a);
        }
        let [e1, e2, g1, g2] = bound.graph.expect("learner present when no fixed adjacency");
        let raw = learn_adjacency(e1, e2, g1, g2, self.config.beta)?;
        normalize_adjacency(sparsify_topk(raw, self.config.effective_topk())?)
    }

    /// Learned adjacency (after top-k) and its normalisation, outside training.
    pub fn adjacency(&self) -> Result<Adjacency> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let normalized = self.normalized_adjacency(&bound)?.value();
        let raw = match bound.graph {
            Some([e1, e2, g1, g2]) => sparsify_topk(
                learn_adjacency(e1, e2, g1, g2, self.config.beta)?,
                self.config.effective_topk(),
            )?
            .value(),
            None => normalized.clone(),
        };
        Ok(Adjacency {
            raw,
            normalized,
            topk: self.config.effective_topk(),
        })
    }

    fn spatial<'t>(&self, x: Var<'t>, a_hat: Var<'t>, bound: &BoundParams<'t>) -> Result<Var<'t>> {
        let ab = &self.config.ablation;
        let states = if ab.discrete_spatial() {
            khop_trajectory(x, a_hat, self.config.cgp.steps()?)?
        } else {
            cgp_trajectory(x, a_hat, &self.config.cgp)?
        };
        if ab.no_attn {
            feature_map(*states.last().expect("non-empty trajectory"), bound.attn[0])
        } else {
            attentive_sum(&states, &bound.attn)
        }
    }

    fn check_input(&self, x: &[usize]) -> Result<usize> {
        let c = &self.config;
        if x.len() != 4 || x[1] != c.nodes || x[2] != c.input_dim || x[3] != c.input_len {
            return dim_err(format!(
                "input {x:?} does not match [B, {}, {}, {}]",
                c.nodes, c.input_dim, c.input_len
            ));
        }
        Ok(x[0])
    }

    /// `[B, N, D, T]` window → `[B, N, D']` representation.
    pub fn encode<'t>(&self, x: Var<'t>, bound: &BoundParams<'t>, phase: &mut Phase<'_>) -> Result<Var<'t>> {
        let batch = self.check_input(&x.shape())?;
        let r = self.schedule.receptive_field;
        let steps = self.schedule.steps();
        match self.schedule.informative_length_after(steps) {
            Some(1) => {}
            other => {
                return contract_err(format!(
                    "informative length after {steps} steps is {other:?}, expected exactly 1"
                ))
            }
        }
        let h0 = bound.start.apply(x.pad_left(r)?, 1)?;
        let a_hat = self.normalized_adjacency(bound)?;
        let rate = self.config.dropout;

        let terminal = if self.config.ablation.discrete_temporal() {
            let k_max = self.schedule.max_width();
            let mut h = h0;
            let mut len = r;
            for (layer, tcn) in bound.tcn.iter().enumerate() {
                let dilation = self.schedule.dilation(layer);
                let conv = phase.dropout(gated_tcn(h, tcn, dilation)?, rate)?;
                let update = self.spatial(conv, a_hat, bound)?;
                len -= (k_max - 1) * dilation;
                h = h.truncate_last(len)?.add(update)?;
            }
            h
        } else {
            let tcn = &bound.tcn[0];
            let field = |h: &Var<'t>, step: usize| -> Result<Var<'t>> {
                let conv = phase.dropout(gated_tcn(*h, tcn, self.schedule.dilation(step))?, rate)?;
                self.spatial(conv, a_hat, bound)?.pad_left(r)
            };
            integrate(field, h0, &self.config.cta)?
        };
        terminal
            .truncate_last(1)?
            .reshape(&[batch, self.config.nodes, self.config.hidden_dim])
    }

    /// `[B, N, D']` → `[B, N, D]` (single-step) or `[B, N, D, H]` (multi-step).
    pub fn decode<'t>(&self, h: Var<'t>, bound: &BoundParams<'t>) -> Result<Var<'t>> {
        let shape = h.shape();
        if shape.len() != 3 || shape[1] != self.config.nodes || shape[2] != self.config.hidden_dim {
            return dim_err(format!("decoder input {shape:?} is not [B, N, D']"));
        }
        let x = h.reshape(&[shape[0], shape[1], shape[2], 1])?;
        let hidden = bound.decoder[0].apply(x, 1)?.relu();
        let out = bound.decoder[1].apply(hidden, 1)?;
        let mut target = vec![shape[0], shape[1]];
        target.extend(self.config.output_tail());
        out.reshape(&target)
    }

    pub fn forward<'t>(&self, x: Var<'t>, bound: &BoundParams<'t>, phase: &mut Phase<'_>) -> Result<Var<'t>> {
        let h = self.encode(x, bound, phase)?;
        self.decode(h, bound)
    }

    /// Inference on a `[B, N, D, T]` batch.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let xv = tape.constant(x.detached());
        Ok(self.forward(xv, &bound, &mut Phase::Eval)?.value())
    }

    /// Encoder output for a `[B, N, D, T]` batch, outside training.
    pub fn encode_value(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let xv = tape.constant(x.detached());
        Ok(self.encode(xv, &bound, &mut Phase::Eval)?.value())
    }
}

/// Mean absolute error training loss.
pub fn loss_mae<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    mae(pred, target)
}

/// Builds the model variant selected by the config's ablation flags.
pub fn build_variant(config: ModelConfig, seed: u64) -> Result<Model> {
    Model::new(config, seed)
}

/// Small configuration used throughout the tests and the verification harness.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        nodes: 3,
        input_dim: 1,
        hidden_dim: 4,
        input_len: 4,
        horizon: 1,
        mode: Mode::SingleStep,
        dilation_factor: 1,
        widths: vec![2, 3],
        cta: SolverSpec::euler(1.0, 0.5).expect("valid"),
        cgp: SolverSpec::euler(1.0, 0.5).expect("valid"),
        topk: 3,
        beta: 3.0,
        embed_dim: 2,
        dropout: 0.0,
        decoder_hidden: 4,
        ablation: Ablation::default(),
    }
}
