//! Straight-loop implementations used as independent oracles.
//!
//! Nothing here touches the tape: every routine works on raw value arrays
//! with explicit index arithmetic so that it shares no code with the
//! differentiable path it is compared against.

use crate::error::{contract_err, dim_err, Result};
use crate::model::Model;
use crate::temporal::{ConvParams, TcnParams};
use crate::tensor::Tensor;

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * m + j];
            }
            out[i * m + j] = s;
        }
    }
    out
}

/// `Â^hops · H` with the node axis third from last.
pub fn khop_propagate(a_hat: &Tensor, h: &Tensor, hops: usize) -> Result<Tensor> {
    let shape = h.shape();
    let rank = shape.len();
    if rank < 3 || a_hat.shape() != [shape[rank - 3], shape[rank - 3]] {
        return dim_err(format!("khop_propagate: {:?} with {:?}", a_hat.shape(), shape));
    }
    let n = shape[rank - 3];
    let inner = shape[rank - 2] * shape[rank - 1];
    let outer = h.len() / (n * inner);
    let a = a_hat.values();
    let mut cur = h.values().to_vec();
    for _ in 0..hops {
        let mut next = vec![0.0; cur.len()];
        for o in 0..outer {
            for i in 0..n {
                for x in 0..inner {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += a[i * n + j] * cur[(o * n + j) * inner + x];
                    }
                    next[(o * n + i) * inner + x] = s;
                }
            }
        }
        cur = next;
    }
    Tensor::new(shape.to_vec(), cur)
}

/// `Σ_i states[i] · maps[i]` over the channel axis.
pub fn attentive_plain(states: &[Tensor], maps: &[Tensor]) -> Result<Tensor> {
    if states.is_empty() || states.len() != maps.len() {
        return contract_err("attentive_plain: one map per state required");
    }
    let shape = states[0].shape().to_vec();
    let rank = shape.len();
    let (c, q) = (shape[rank - 2], shape[rank - 1]);
    let outer = states[0].len() / (c * q);
    let c_out = maps[0].shape()[1];
    let mut out_shape = shape.clone();
    out_shape[rank - 2] = c_out;
    let mut out = vec![0.0; outer * c_out * q];
    for (s, m) in states.iter().zip(maps) {
        for o in 0..outer {
            for e in 0..c_out {
                for t in 0..q {
                    let mut acc = 0.0;
                    for d in 0..c {
                        acc += s.values()[(o * c + d) * q + t] * m.values()[d * c_out + e];
                    }
                    out[(o * c_out + e) * q + t] += acc;
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Valid dilated convolution: `out[co, t] = b[co] + Σ_ci Σ_j w[co, ci, j] · x[ci, t + δj]`.
pub fn conv_plain(x: &Tensor, conv: &ConvParams, dilation: usize) -> Result<Tensor> {
    let shape = x.shape();
    let rank = shape.len();
    let (c_in, q) = (shape[rank - 2], shape[rank - 1]);
    let ws = conv.weight.shape();
    let (c_out, width) = (ws[0], ws[2]);
    if ws[1] != c_in || q <= dilation * (width - 1) {
        return dim_err(format!(
            "conv_plain: input {shape:?}, weight {ws:?}, dilation {dilation}"
        ));
    }
    let q_out = q - dilation * (width - 1);
    let outer = x.len() / (c_in * q);
    let (w, b, xv) = (conv.weight.values(), conv.bias.values(), x.values());
    let mut out = vec![0.0; outer * c_out * q_out];
    for o in 0..outer {
        for co in 0..c_out {
            for t in 0..q_out {
                let mut s = b[co];
                for ci in 0..c_in {
                    for j in 0..width {
                        s += w[(co * c_in + ci) * width + j] * xv[(o * c_in + ci) * q + t + dilation * j];
                    }
                }
                out[(o * c_out + co) * q_out + t] = s;
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[rank - 2] = c_out;
    out_shape[rank - 1] = q_out;
    Tensor::new(out_shape, out)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated multi-width convolution, branches cut to the widest kernel's length.
pub fn gated_tcn_plain(h: &Tensor, tcn: &TcnParams, dilation: usize) -> Result<Tensor> {
    let shape = h.shape();
    let rank = shape.len();
    let q = shape[rank - 1];
    let k_max = tcn.widths.iter().copied().max().unwrap_or(1);
    if q <= dilation * (k_max - 1) {
        return dim_err("gated_tcn_plain: sequence too short");
    }
    let q_out = q - dilation * (k_max - 1);
    let outer = h.len() / (shape[rank - 2] * q);
    let per = tcn.filter[0].weight.shape()[0];
    let c_out = per * tcn.widths.len();
    let mut out = vec![0.0; outer * c_out * q_out];
    for (b, (f, g)) in tcn.filter.iter().zip(&tcn.gate).enumerate() {
        let fo = conv_plain(h, f, dilation)?;
        let go = conv_plain(h, g, dilation)?;
        let len = fo.shape()[rank - 1];
        let skip = len - q_out;
        for o in 0..outer {
            for c in 0..per {
                for t in 0..q_out {
                    let src = (o * per + c) * len + skip + t;
                    out[(o * c_out + b * per + c) * q_out + t] = fo.values()[src].tanh() * sigmoid(go.values()[src]);
                }
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[rank - 2] = c_out;
    out_shape[rank - 1] = q_out;
    Tensor::new(out_shape, out)
}

fn pad_left(x: &Tensor, len: usize) -> Result<Tensor> {
    let shape = x.shape();
    let rank = shape.len();
    let q = shape[rank - 1];
    let rows = x.len() / q;
    let mut out = vec![0.0; rows * len];
    for r in 0..rows {
        out[r * len + len - q..(r + 1) * len].copy_from_slice(&x.values()[r * q..(r + 1) * q]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[rank - 1] = len;
    Tensor::new(out_shape, out)
}

fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Tensor::new(
        a.shape().to_vec(),
        a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect(),
    )
}

/// Spatial stage applied inside every layer of the discrete stack.
pub struct DiscreteSpatial<'a> {
    pub a_hat: &'a Tensor,
    pub hops: usize,
    pub maps: &'a [Tensor],
}

/// Padding-based residual stack `H_{l+1} = H_l + P(S(TCN_l(H_l, r^l)), R)`
/// where `S` is the optional K-hop attentive stage; returns the final state.
pub fn padded_residual_stack(
    h0: &Tensor,
    layers: &[&TcnParams],
    dilation_factor: usize,
    spatial: Option<&DiscreteSpatial<'_>>,
) -> Result<Tensor> {
    let r = *h0.shape().last().expect("rank checked by callers");
    let mut h = h0.clone();
    for (l, tcn) in layers.iter().enumerate() {
        let mut u = gated_tcn_plain(&h, tcn, dilation_factor.pow(l as u32))?;
        if let Some(s) = spatial {
            let states = (0..=s.hops)
                .map(|k| khop_propagate(s.a_hat, &u, k))
                .collect::<Result<Vec<_>>>()?;
            u = attentive_plain(&states, s.maps)?;
        }
        h = add(&h, &pad_left(&u, r)?)?;
    }
    Ok(h)
}

/// Learned adjacency after top-k and self-loop row normalisation.
pub fn normalized_adjacency_plain(model: &Model) -> Result<Tensor> {
    let params = &model.params;
    if let Some(a) = &params.fixed_adjacency {
        return Ok(a.detached());
    }
    let Some(g) = &params.graph else {
        return contract_err("model has neither a learner nor a fixed adjacency");
    };
    let (n, d) = (g.e1.shape()[0], g.e1.shape()[1]);
    let beta = g.beta;
    let m1: Vec<f64> = matmul(g.e1.values(), g.g1.values(), n, d, d)
        .iter()
        .map(|v| (beta * v).tanh())
        .collect();
    let m2: Vec<f64> = matmul(g.e2.values(), g.g2.values(), n, d, d)
        .iter()
        .map(|v| (beta * v).tanh())
        .collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..d {
                s += m1[i * d + l] * m2[j * d + l] - m2[i * d + l] * m1[j * d + l];
            }
            a[i * n + j] = (beta * s).tanh().max(0.0) * (1.0 - f64::EPSILON / 2.0);
        }
    }
    let k = model.config.effective_topk();
    for i in 0..n {
        let row = &mut a[i * n..(i + 1) * n];
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&x, &y| row[y].partial_cmp(&row[x]).expect("finite").then(x.cmp(&y)));
        for &j in &idx[k..] {
            row[j] = 0.0;
        }
        row[i] += 1.0;
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::new(vec![n, n], a)
}

/// Encoder of a discrete-temporal, discrete-spatial model evaluated with
/// plain loops, using `layers` as the per-layer convolution parameters.
pub fn discrete_encoder(model: &Model, x: &Tensor, layers: &[&TcnParams]) -> Result<Tensor> {
    let cfg = &model.config;
    let shape = x.shape();
    if shape.len() != 4 {
        return dim_err(format!("discrete_encoder expects [B, N, D, T], got {shape:?}"));
    }
    let r = model.schedule().receptive_field;
    let h0 = conv_plain(&pad_left(x, r)?, &model.params.start, 1)?;
    let a_hat = normalized_adjacency_plain(model)?;
    let spatial = DiscreteSpatial {
        a_hat: &a_hat,
        hops: cfg.cgp.steps()?,
        maps: &model.params.attn,
    };
    let h = padded_residual_stack(&h0, layers, cfg.dilation_factor, Some(&spatial))?;
    let (b, n, c) = (shape[0], cfg.nodes, cfg.hidden_dim);
    let values = (0..b * n * c).map(|i| h.values()[i * r + r - 1]).collect();
    Tensor::new(vec![b, n, c], values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{conv1d_dilated, Tape};
    use crate::testutil::rand_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_plain_hand_value() {
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let conv = ConvParams {
            weight: Tensor::new(vec![1, 1, 2], vec![10.0, 1.0]).unwrap(),
            bias: Tensor::new(vec![1], vec![0.5]).unwrap(),
        };
        let out = conv_plain(&x, &conv, 2).unwrap();
        assert_eq!(out.values(), &[10.0 + 3.0 + 0.5, 20.0 + 4.0 + 0.5]);
    }

    #[test]
    fn conv_plain_agrees_with_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = ConvParams::random(3, 2, 3, &mut rng);
        let x = rand_tensor(&[2, 2, 9], 2);
        let tape = Tape::new();
        let v = conv1d_dilated(
            tape.constant(x.clone()),
            tape.constant(conv.weight.detached()),
            Some(tape.constant(conv.bias.detached())),
            2,
        )
        .unwrap()
        .value();
        assert!(conv_plain(&x, &conv, 2).unwrap().max_abs_diff(&v) < 1e-14);
    }

    #[test]
    fn khop_zero_hops_is_identity() {
        let a = rand_tensor(&[3, 3], 3);
        let h = rand_tensor(&[3, 2, 2], 4);
        assert_eq!(khop_propagate(&a, &h, 0).unwrap(), h);
    }

    #[test]
    fn pad_left_places_suffix() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(pad_left(&x, 3).unwrap().values(), &[0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
    }
}
