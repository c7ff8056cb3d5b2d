//! Graph structure learning and continuous graph propagation.
//!
//! The learned adjacency is `A = relu(tanh(β(M1·M2ᵀ − M2·M1ᵀ)))` with
//! `Mk = tanh(β·Ek·Gk)`. The argument of the outer `tanh` is antisymmetric,
//! so the `relu` keeps at most one direction of every node pair and the
//! diagonal is zero.
//!
//! Propagation is the graph diffusion ODE `dH/dt = (Â − I)·H = −L·H`. With
//! Euler and `dt = 1`, `K` steps reproduce K-hop propagation `Â^K·H`; smaller
//! steps approach the heat kernel `e^{−tL}·H` instead.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, feature_map, propagate_nodes, Tape, Var};
use crate::error::{contract_err, dim_err, Result};
use crate::ode::{integrate_trajectory, SolverSpec};
use crate::tensor::Tensor;

pub const DEFAULT_BETA: f64 = 3.0;
pub const DEFAULT_TOPK: usize = 20;

/// Node embeddings and transforms of the graph learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphLearnerParams {
    pub e1: Tensor,
    pub e2: Tensor,
    pub g1: Tensor,
    pub g2: Tensor,
    pub beta: f64,
}

impl GraphLearnerParams {
    /// Transforms ~ U(±1/√d). Embeddings ~ N(0, σ²) with σ chosen so the
    /// antisymmetric pre-activation has unit variance at initialisation,
    /// σ⁴ = 9 / (2 d β⁶), falling back to 1/√d when β = 0.
    pub fn random<R: Rng + ?Sized>(nodes: usize, dim: usize, beta: f64, rng: &mut R) -> Result<Self> {
        if nodes < 2 || dim < 1 {
            return contract_err(format!("graph learner needs N >= 2 and d >= 1, got N={nodes}, d={dim}"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return contract_err(format!("beta must be non-negative, got {beta}"));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let std = if beta > 0.0 {
            (4.5 / (dim as f64 * beta.powi(6))).powf(0.25)
        } else {
            bound
        };
        let normal = Normal::new(0.0, std).expect("finite std");
        let uniform = Uniform::new_inclusive(-bound, bound).expect("uniform range");
        let mut emb = || Tensor::from_fn(&[nodes, dim], |_| normal.sample(rng)).with_grad();
        let (e1, e2) = (emb(), emb());
        let mut lin = || Tensor::from_fn(&[dim, dim], |_| uniform.sample(rng)).with_grad();
        let (g1, g2) = (lin(), lin());
        Ok(GraphLearnerParams { e1, e2, g1, g2, beta })
    }

    pub fn nodes(&self) -> usize {
        self.e1.shape()[0]
    }

    /// Raw adjacency evaluated outside any training tape.
    pub fn adjacency(&self) -> Result<Tensor> {
        let tape = Tape::new();
        let [e1, e2, g1, g2] = [&self.e1, &self.e2, &self.g1, &self.g2].map(|t| tape.constant(t.detached()));
        Ok(learn_adjacency(e1, e2, g1, g2, self.beta)?.value())
    }
}

/// Learned raw and normalised adjacency, for export and inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    pub raw: Tensor,
    pub normalized: Tensor,
    pub topk: usize,
}

pub fn learn_adjacency<'t>(e1: Var<'t>, e2: Var<'t>, g1: Var<'t>, g2: Var<'t>, beta: f64) -> Result<Var<'t>> {
    let m1 = e1.matmul(g1)?.scale(beta).tanh();
    let m2 = e2.matmul(g2)?.scale(beta).tanh();
    let forward = m1.matmul(m2.transpose()?)?;
    let backward = m2.matmul(m1.transpose()?)?;
    // tanh rounds to exactly 1.0 for arguments above ~19; the ulp-sized
    // shrink keeps every entry strictly below 1
    Ok(forward.sub(backward)?.scale(beta).tanh().relu().scale(BELOW_ONE))
}

/// Largest double below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Row-wise mask keeping the `k` largest entries; ties go to the lower column.
pub fn topk_mask(adj: &Tensor, k: usize) -> Result<Tensor> {
    if adj.rank() != 2 || adj.shape()[0] != adj.shape()[1] {
        return dim_err(format!("top-k needs a square matrix, got {:?}", adj.shape()));
    }
    let n = adj.shape()[0];
    if k == 0 || k > n {
        return contract_err(format!("top-k level {k} outside 1..={n}"));
    }
    let mut mask = Tensor::zeros(&[n, n]);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let row = &adj.values()[i * n..(i + 1) * n];
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in &order[..k] {
            mask.values_mut()[i * n + j] = 1.0;
        }
    }
    Ok(mask)
}

/// Zeroes all but the `k` largest entries of each row. Gradients reach only
/// the kept entries.
pub fn sparsify_topk(adj: Var<'_>, k: usize) -> Result<Var<'_>> {
    let mask = topk_mask(&adj.value(), k)?;
    adj.mask(mask)
}

/// `Â = D̃⁻¹(A + I)`.
pub fn normalize_adjacency(adj: Var<'_>) -> Result<Var<'_>> {
    let v = adj.value();
    if v.values().iter().any(|&x| x < 0.0) {
        return contract_err("normalize_adjacency needs a non-negative matrix");
    }
    autodiff::row_normalize_with_self_loops(adj)
}

/// `(Â − I)·H`.
pub fn cgp_field<'t>(h: Var<'t>, a_hat: Var<'t>) -> Result<Var<'t>> {
    propagate_nodes(a_hat, h)?.sub(h)
}

/// Grid states `H(0), H(dt), .., H(T)` of the diffusion ODE.
pub fn cgp_trajectory<'t>(h0: Var<'t>, a_hat: Var<'t>, spec: &SolverSpec) -> Result<Vec<Var<'t>>> {
    integrate_trajectory(|h: &Var<'t>, _| cgp_field(*h, a_hat), h0, spec)
}

/// Discrete K-hop states `H, ÂH, .., Â^K H`.
pub fn khop_trajectory<'t>(h0: Var<'t>, a_hat: Var<'t>, hops: usize) -> Result<Vec<Var<'t>>> {
    let mut states = Vec::with_capacity(hops + 1);
    states.push(h0);
    for k in 0..hops {
        states.push(propagate_nodes(a_hat, states[k])?);
    }
    Ok(states)
}

/// `Σ_i H_i·Φ_i` over the feature axis.
pub fn attentive_sum<'t>(states: &[Var<'t>], maps: &[Var<'t>]) -> Result<Var<'t>> {
    if states.len() != maps.len() || states.is_empty() {
        return contract_err(format!(
            "attentive transform needs one map per state: {} states, {} maps",
            states.len(),
            maps.len()
        ));
    }
    let mut acc = feature_map(states[0], maps[0])?;
    for (s, m) in states.iter().zip(maps).skip(1) {
        acc = acc.add(feature_map(*s, *m)?)?;
    }
    Ok(acc)
}

/// Solves the diffusion ODE and combines every grid state with its own map.
pub fn cgp_solve_attentive<'t>(h0: Var<'t>, a_hat: Var<'t>, spec: &SolverSpec, maps: &[Var<'t>]) -> Result<Var<'t>> {
    let k = spec.steps()?;
    if maps.len() != k + 1 {
        return contract_err(format!(
            "expected {} attentive maps for K={k}, got {}",
            k + 1,
            maps.len()
        ));
    }
    attentive_sum(&cgp_trajectory(h0, a_hat, spec)?, maps)
}

fn check_square(a: &Tensor) -> Result<usize> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return dim_err(format!("expected a square matrix, got {:?}", a.shape()));
    }
    Ok(a.shape()[0])
}

fn to_dmatrix(a: &Tensor) -> DMatrix<f64> {
    let n = a.shape()[0];
    DMatrix::from_row_slice(n, a.shape()[1], a.values())
}

/// `L = I − Â` as a dense matrix.
pub fn laplacian(a_hat: &Tensor) -> Result<DMatrix<f64>> {
    let n = check_square(a_hat)?;
    Ok(DMatrix::identity(n, n) - to_dmatrix(a_hat))
}

/// Spectral norm (largest singular value) of `I − Â`.
pub fn laplacian_spectral_norm(a_hat: &Tensor) -> Result<f64> {
    let l = laplacian(a_hat)?;
    Ok(l.singular_values().max())
}

/// Symmetric normalisation `D̃^{-1/2}(A + I)D̃^{-1/2}` of a non-negative,
/// symmetric matrix. Only used to build test graphs for the oracle.
pub fn symmetric_normalize(adj: &Tensor) -> Result<Tensor> {
    let n = check_square(adj)?;
    let mut a = adj.detached();
    for i in 0..n {
        a.values_mut()[i * n + i] += 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| a.values()[i * n..(i + 1) * n].iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a.values_mut()[i * n + j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    Ok(a)
}

/// Closed-form diffusion `e^{−tL}·H0` via `L = UΛUᵀ`. `L` must be symmetric.
pub fn heat_kernel_oracle(a_hat_sym: &Tensor, t: f64, h0: &Tensor) -> Result<Tensor> {
    let n = check_square(a_hat_sym)?;
    if t < 0.0 {
        return contract_err(format!("heat kernel time must be non-negative, got {t}"));
    }
    let l = laplacian(a_hat_sym)?;
    let asym = (&l - l.transpose()).abs().max();
    if asym > 1e-12 {
        return contract_err(format!(
            "heat kernel oracle needs a symmetric Laplacian (asymmetry {asym:e})"
        ));
    }
    let eig = SymmetricEigen::new(l);
    let decay = DMatrix::from_diagonal(&eig.eigenvalues.map(|lambda| (-t * lambda).exp()));
    let kernel = &eig.eigenvectors * decay * eig.eigenvectors.transpose();
    apply_node_matrix(&kernel, h0, n)
}

fn apply_node_matrix(m: &DMatrix<f64>, h: &Tensor, n: usize) -> Result<Tensor> {
    if h.rank() < 3 {
        return dim_err(format!("node states need rank >= 3, got {:?}", h.shape()));
    }
    let axis = h.rank() - 3;
    if h.shape()[axis] != n {
        return dim_err(format!("{n}x{n} operator applied to states {:?}", h.shape()));
    }
    let outer: usize = h.shape()[..axis].iter().product();
    let inner: usize = h.shape()[axis + 1..].iter().product();
    let mut out = Tensor::zeros(h.shape());
    for o in 0..outer {
        for r in 0..n {
            for c in 0..n {
                let w = m[(r, c)];
                for i in 0..inner {
                    out.values_mut()[(o * n + r) * inner + i] += w * h.values()[(o * n + c) * inner + i];
                }
            }
        }
    }
    Ok(out)
}

/// Upper bound on the Euler error after `K` steps:
/// `(T·‖L‖·‖H0‖ / 2K)·(e^{T‖L‖} − 1)` with spectral `‖L‖` and Frobenius `‖H0‖`.
pub fn euler_error_bound(terminal_time: f64, laplacian_norm: f64, h0_norm: f64, steps: usize) -> f64 {
    let tl = terminal_time * laplacian_norm;
    tl * h0_norm / (2.0 * steps as f64) * tl.exp_m1()
}
