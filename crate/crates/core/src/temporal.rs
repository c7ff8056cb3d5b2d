//! Gated dilated temporal convolution and the temporal aggregation ODE.
//!
//! The temporal field maps a state of length `R` through a gated,
//! multi-width dilated convolution and left-pads the (shorter) result back
//! to `R`. With dilation `r^i` at aggregation step `i`, the informative
//! suffix of the state shrinks by `(k_max − 1)·r^i` per step and reaches a
//! single slot after `K` steps when `R` is the receptive field for `K`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_channels, conv1d_dilated, Tape, Var};
use crate::error::{contract_err, dim_err, Result};
use crate::ode::SolverSpec;
use crate::tensor::Tensor;

pub const DEFAULT_WIDTHS: [usize; 4] = [2, 3, 6, 7];

/// Receptive field of `layers` dilated convolutions of width `kernel`
/// with dilation factor `r`.
pub fn receptive_field(r: usize, kernel: usize, layers: usize) -> usize {
    assert!(r >= 1 && kernel >= 1, "receptive_field: r and k must be positive");
    if r == 1 {
        layers * (kernel - 1) + 1
    } else {
        1 + (kernel - 1) * (r.pow(layers as u32) - 1) / (r - 1)
    }
}

/// `⌊r^step⌋`.
pub fn dilation_at(r: usize, step: usize) -> usize {
    r.pow(step as u32)
}

pub fn truncate_last(h: Var<'_>, len: usize) -> Result<Var<'_>> {
    h.truncate_last(len)
}

pub fn pad_left_zero(h: Var<'_>, len: usize) -> Result<Var<'_>> {
    h.pad_left(len)
}

/// One convolution: weight `[C_out, C_in, m]` and bias `[C_out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    /// PyTorch-style default: U(±1/√(C_in·m)) for weight and bias.
    pub fn random<R: Rng + ?Sized>(c_out: usize, c_in: usize, width: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((c_in * width) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("uniform range");
        ConvParams {
            weight: Tensor::from_fn(&[c_out, c_in, width], |_| dist.sample(rng)).with_grad(),
            bias: Tensor::from_fn(&[c_out], |_| dist.sample(rng)).with_grad(),
        }
    }

    pub fn zeros(c_out: usize, c_in: usize, width: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros(&[c_out, c_in, width]).with_grad(),
            bias: Tensor::zeros(&[c_out]).with_grad(),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> ConvVars<'t> {
        ConvVars {
            weight: tape.param(&self.weight),
            bias: tape.param(&self.bias),
        }
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvVars<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> ConvVars<'t> {
    pub fn apply(&self, x: Var<'t>, dilation: usize) -> Result<Var<'t>> {
        conv1d_dilated(x, self.weight, Some(self.bias), dilation)
    }

    pub fn vars(&self) -> [Var<'t>; 2] {
        [self.weight, self.bias]
    }
}

/// Filter and gate convolutions for each kernel width; every branch emits
/// `D' / |widths|` channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcnParams {
    pub widths: Vec<usize>,
    pub filter: Vec<ConvParams>,
    pub gate: Vec<ConvParams>,
}

fn check_widths(channels: usize, widths: &[usize]) -> Result<usize> {
    if widths.is_empty() || widths.contains(&0) {
        return contract_err(format!("kernel widths must be non-empty and positive, got {widths:?}"));
    }
    if !channels.is_multiple_of(widths.len()) {
        return contract_err(format!(
            "hidden size {channels} is not divisible by {} kernel widths",
            widths.len()
        ));
    }
    Ok(channels / widths.len())
}

impl TcnParams {
    pub fn random<R: Rng + ?Sized>(channels: usize, widths: &[usize], rng: &mut R) -> Result<Self> {
        let per = check_widths(channels, widths)?;
        let mut filter = Vec::with_capacity(widths.len());
        let mut gate = Vec::with_capacity(widths.len());
        for &m in widths {
            filter.push(ConvParams::random(per, channels, m, rng));
            gate.push(ConvParams::random(per, channels, m, rng));
        }
        Ok(TcnParams {
            widths: widths.to_vec(),
            filter,
            gate,
        })
    }

    pub fn zeros(channels: usize, widths: &[usize]) -> Result<Self> {
        let per = check_widths(channels, widths)?;
        Ok(TcnParams {
            widths: widths.to_vec(),
            filter: widths.iter().map(|&m| ConvParams::zeros(per, channels, m)).collect(),
            gate: widths.iter().map(|&m| ConvParams::zeros(per, channels, m)).collect(),
        })
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> TcnVars<'t> {
        TcnVars {
            widths: self.widths.clone(),
            filter: self.filter.iter().map(|c| c.bind(tape)).collect(),
            gate: self.gate.iter().map(|c| c.bind(tape)).collect(),
        }
    }

    /// Filter then gate tensors per width, in the same order as [`TcnVars::vars`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.filter
            .iter_mut()
            .zip(self.gate.iter_mut())
            .flat_map(|(f, g)| f.tensors_mut().into_iter().chain(g.tensors_mut()))
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.filter
            .iter()
            .zip(&self.gate)
            .flat_map(|(f, g)| f.tensors().into_iter().chain(g.tensors()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct TcnVars<'t> {
    pub widths: Vec<usize>,
    pub filter: Vec<ConvVars<'t>>,
    pub gate: Vec<ConvVars<'t>>,
}

impl<'t> TcnVars<'t> {
    pub fn vars(&self) -> Vec<Var<'t>> {
        self.filter
            .iter()
            .zip(&self.gate)
            .flat_map(|(f, g)| f.vars().into_iter().chain(g.vars()))
            .collect()
    }

    fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }
}

/// `tanh(W_c ⋆_δ H + b_c) ⊙ σ(W_g ⋆_δ H + b_g)`, each width's branch cut to the
/// widest kernel's output length and concatenated over channels.
pub fn gated_tcn<'t>(h: Var<'t>, params: &TcnVars<'t>, dilation: usize) -> Result<Var<'t>> {
    let shape = h.shape();
    let Some(&q) = shape.last() else {
        return dim_err("gated_tcn on a scalar");
    };
    let span = dilation * (params.max_width() - 1);
    if q < span + 1 {
        return dim_err(format!(
            "gated_tcn: length {q} too short for width {} at dilation {dilation}",
            params.max_width()
        ));
    }
    let q_out = q - span;
    let mut branches = Vec::with_capacity(params.widths.len());
    for (f, g) in params.filter.iter().zip(&params.gate) {
        let filt = f.apply(h, dilation)?.truncate_last(q_out)?.tanh();
        let gate = g.apply(h, dilation)?.truncate_last(q_out)?.sigmoid();
        branches.push(filt.mul(gate)?);
    }
    concat_channels(&branches)
}

/// Dilation schedule and receptive field of the temporal aggregation ODE.
#[derive(Clone, Debug, PartialEq)]
pub struct CtaSchedule {
    pub dilation_factor: usize,
    pub spec: SolverSpec,
    pub widths: Vec<usize>,
    pub receptive_field: usize,
}

impl CtaSchedule {
    pub fn new(dilation_factor: usize, spec: SolverSpec, widths: &[usize]) -> Result<Self> {
        if dilation_factor == 0 {
            return contract_err("dilation factor must be at least 1");
        }
        let k_max = widths.iter().copied().max().unwrap_or(0);
        if k_max < 2 {
            return contract_err(format!("widest kernel must be at least 2, got {widths:?}"));
        }
        let steps = spec.steps()?;
        Ok(CtaSchedule {
            dilation_factor,
            spec,
            widths: widths.to_vec(),
            receptive_field: receptive_field(dilation_factor, k_max, steps),
        })
    }

    pub fn steps(&self) -> usize {
        self.spec.steps().expect("validated at construction")
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    pub fn dilation(&self, step: usize) -> usize {
        dilation_at(self.dilation_factor, step)
    }

    /// Informative suffix length left after `steps` aggregation steps, or
    /// `None` on underflow.
    pub fn informative_length_after(&self, steps: usize) -> Option<usize> {
        let consumed: usize = (0..steps).map(|i| (self.max_width() - 1) * self.dilation(i)).sum();
        self.receptive_field.checked_sub(consumed).filter(|&l| l >= 1)
    }
}

/// `P(gated_tcn(H, δ_step), R)`: the temporal field without graph propagation.
pub fn cta_field_plain<'t>(h: Var<'t>, step: usize, params: &TcnVars<'t>, schedule: &CtaSchedule) -> Result<Var<'t>> {
    let out = gated_tcn(h, params, schedule.dilation(step))?;
    out.pad_left(schedule.receptive_field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::integrate;
    use crate::testutil::{assert_grad_matches, rand_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn receptive_field_values() {
        assert_eq!(receptive_field(1, 2, 5), 6);
        assert_eq!(receptive_field(2, 2, 5), 32);
        assert_eq!(receptive_field(2, 7, 3), 43);
    }

    #[test]
    fn dilation_values() {
        assert_eq!(dilation_at(1, 7), 1);
        assert_eq!(dilation_at(2, 2), 4);
        assert_eq!(dilation_at(2, 0), 1);
    }

    #[test]
    fn pad_and_truncate() {
        let tape = Tape::new();
        let h = tape.constant(Tensor::new(vec![1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        assert_eq!(truncate_last(h, 5).unwrap().value(), h.value());
        assert_eq!(truncate_last(h, 3).unwrap().value().values(), &[3.0, 4.0, 5.0]);
        assert_eq!(truncate_last(h, 1).unwrap().value().values(), &[5.0]);
        assert!(truncate_last(h, 6).is_err());

        let seven = tape.constant(Tensor::new(vec![1, 1, 1], vec![7.0]).unwrap());
        assert_eq!(pad_left_zero(seven, 3).unwrap().value().values(), &[0.0, 0.0, 7.0]);
        assert_eq!(pad_left_zero(h, 5).unwrap().value(), h.value());
        assert!(pad_left_zero(h, 4).is_err());
        let round = truncate_last(pad_left_zero(h, 9).unwrap(), 5).unwrap();
        assert_eq!(round.value(), h.value());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let tape = Tape::new();
        let p = TcnParams::zeros(4, &[2, 3]).unwrap().bind(&tape);
        let h = tape.constant(rand_tensor(&[2, 4, 6], 1));
        let out = gated_tcn(h, &p, 1).unwrap();
        assert_eq!(out.shape(), vec![2, 4, 4]);
        assert_eq!(out.value().max_abs(), 0.0);
    }

    #[test]
    fn saturated_biases_give_one() {
        let tape = Tape::new();
        let mut p = TcnParams::zeros(2, &[2, 3]).unwrap();
        for c in p.filter.iter_mut().chain(p.gate.iter_mut()) {
            c.bias.values_mut().iter_mut().for_each(|b| *b = 20.0);
        }
        let h = tape.constant(rand_tensor(&[1, 2, 5], 2));
        let out = gated_tcn(h, &p.bind(&tape), 1).unwrap().value();
        assert!(out.values().iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn current_slot_filter() {
        let tape = Tape::new();
        let w = 0.8;
        let mut p = TcnParams::zeros(1, &[2]).unwrap();
        p.filter[0].weight.values_mut().copy_from_slice(&[0.0, w]);
        p.gate[0].bias.values_mut()[0] = 40.0;
        let x = [0.5, -1.0, 2.0];
        let h = tape.constant(Tensor::new(vec![1, 1, 3], x.to_vec()).unwrap());
        let out = gated_tcn(h, &p.bind(&tape), 1).unwrap().value();
        assert_eq!(out.shape(), &[1, 1, 2]);
        for (o, xt) in out.values().iter().zip(&x[1..]) {
            assert!((o - (w * xt).tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn output_strictly_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let p = TcnParams::random(8, &DEFAULT_WIDTHS, &mut rng).unwrap();
        let h = tape.constant(rand_tensor(&[3, 8, 20], 4).map(|v| 5.0 * v));
        let out = gated_tcn(h, &p.bind(&tape), 2).unwrap().value();
        assert_eq!(out.shape(), &[3, 8, 20 - 2 * 6]);
        assert!(out.values().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn too_short_input() {
        let tape = Tape::new();
        let p = TcnParams::zeros(4, &[2, 7]).unwrap().bind(&tape);
        let h = tape.constant(Tensor::zeros(&[1, 4, 12]));
        assert!(matches!(gated_tcn(h, &p, 2), Err(crate::Error::Dimension(_))));
        assert!(gated_tcn(h, &p, 1).is_ok());
    }

    #[test]
    fn rejects_indivisible_channels() {
        assert!(TcnParams::zeros(6, &DEFAULT_WIDTHS).is_err());
    }

    #[test]
    fn gated_tcn_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = TcnParams::random(4, &[2, 3], &mut rng).unwrap();
        let mut inputs: Vec<Tensor> = vec![rand_tensor(&[2, 4, 7], 6)];
        inputs.extend(p.tensors().into_iter().cloned());
        assert_grad_matches(&inputs, |_, v| {
            let tcn = TcnVars {
                widths: vec![2, 3],
                filter: vec![
                    ConvVars {
                        weight: v[1],
                        bias: v[2],
                    },
                    ConvVars {
                        weight: v[5],
                        bias: v[6],
                    },
                ],
                gate: vec![
                    ConvVars {
                        weight: v[3],
                        bias: v[4],
                    },
                    ConvVars {
                        weight: v[7],
                        bias: v[8],
                    },
                ],
            };
            let out = gated_tcn(v[0], &tcn, 2)?;
            Ok(out.mul(out)?.sum())
        });
    }

    #[test]
    fn schedule_ledger_reaches_one() {
        for (r, widths, k) in [
            (1, vec![2usize], 5usize),
            (2, vec![2], 5),
            (2, vec![2, 3, 6, 7], 3),
            (3, vec![3, 5], 4),
        ] {
            let spec = SolverSpec::euler(k as f64, 1.0).unwrap();
            let s = CtaSchedule::new(r, spec, &widths).unwrap();
            assert_eq!(s.informative_length_after(k), Some(1));
            assert_eq!(s.informative_length_after(k + 1), None);
        }
    }

    #[test]
    fn plain_field_contracts() {
        let tape = Tape::new();
        let spec = SolverSpec::euler(1.0, 0.5).unwrap();
        let sched = CtaSchedule::new(2, spec, &[2, 3]).unwrap();
        assert_eq!(sched.receptive_field, 1 + 2 * 3);
        let zero = TcnParams::zeros(2, &[2, 3]).unwrap().bind(&tape);
        let h0 = tape.constant(rand_tensor(&[3, 2, sched.receptive_field], 7));
        let field = cta_field_plain(h0, 1, &zero, &sched).unwrap();
        assert_eq!(field.shape(), h0.shape());
        let out = integrate(|h: &Var<'_>, i| cta_field_plain(*h, i, &zero, &sched), h0, &spec).unwrap();
        assert_eq!(out.value(), h0.value());
    }
}
