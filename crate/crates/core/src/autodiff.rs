//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to its
//! [`Tape`]. [`Tape::backward`] replays the tape in reverse and returns the
//! adjoint of every node that depends on a gradient-requiring leaf.
//!
//! Broadcasting is deliberately absent: binary elementwise ops need equal
//! shapes, and the only implicit expansion is the per-channel bias of
//! [`conv1d_dilated`].
//!
//! Axis conventions shared by the structured ops:
//! - time is always the last axis;
//! - channels (features) are the second-to-last axis;
//! - graph nodes are the third-to-last axis.
//!
//! Leading axes (batch, nodes for the temporal ops) are flattened into an
//! "outer" extent, so the same op serves `N×D×Q` and `B×N×D×Q` tensors.

use std::cell::RefCell;
use std::fmt;

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScaled(usize, usize, f64),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Propagate {
        adj: usize,
        h: usize,
    },
    Conv1d {
        x: usize,
        w: usize,
        b: Option<usize>,
        dilation: usize,
    },
    FeatureMap {
        h: usize,
        map: usize,
    },
    PadLeft(usize),
    TruncateLast(usize),
    Concat(Vec<usize>),
    Reshape(usize),
    RowNormalize(usize),
    Sum(usize),
    Mean(usize),
    Mae(usize, usize),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `var`; `None` when `var` does not influence
    /// the loss or does not require gradients.
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor of `var`'s shape, zero when absent.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        let shape = var.shape();
        match self.get(var) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Adds the gradient of `var` into `param`'s gradient buffer.
    pub fn accumulate_into(&self, var: Var<'_>, param: &mut Tensor) -> Result<()> {
        match self.get(var) {
            Some(g) => param.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

fn split_at_axis(shape: &[usize], from_end: usize) -> (usize, usize, usize) {
    let axis = shape.len() - from_end;
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, parents: &[usize]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        nodes.len() - 1
    }

    fn push_leaf(&self, t: &Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.values().to_vec(),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records `t` as a leaf; it requires gradients iff `t` does.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push_leaf(t, t.requires_grad())
    }

    /// Records `t` as a trainable leaf regardless of its own flag.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.push_leaf(t, true)
    }

    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push_leaf(&t, false)
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return contract_err("loss belongs to a different tape");
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 || !nodes[loss.id].shape.is_empty() {
            return contract_err(format!(
                "backward needs a 0-dimensional loss, got shape {:?}",
                nodes[loss.id].shape
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], id: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for p in [*a, *b] {
                if let Some(s) = slot(nodes, grads, p) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(s) = slot(nodes, grads, *a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
            if let Some(s) = slot(nodes, grads, *b) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s -= g);
            }
        }
        Op::Mul(a, b) => {
            if let Some(s) = slot(nodes, grads, *a) {
                let other = &nodes[*b].value;
                for i in 0..g.len() {
                    s[i] += g[i] * other[i];
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                let other = &nodes[*a].value;
                for i in 0..g.len() {
                    s[i] += g[i] * other[i];
                }
            }
        }
        Op::AddScaled(a, b, alpha) => {
            if let Some(s) = slot(nodes, grads, *a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
            if let Some(s) = slot(nodes, grads, *b) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += alpha * g);
            }
        }
        Op::Scale(a, alpha) => {
            if let Some(s) = slot(nodes, grads, *a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += alpha * g);
            }
        }
        Op::Tanh(a) => {
            if let Some(s) = slot(nodes, grads, *a) {
                for (i, y) in node.value.iter().enumerate() {
                    s[i] += g[i] * (1.0 - y * y);
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(s) = slot(nodes, grads, *a) {
                for (i, y) in node.value.iter().enumerate() {
                    s[i] += g[i] * y * (1.0 - y);
                }
            }
        }
        Op::Relu(a) => {
            let x = &nodes[*a].value;
            if let Some(s) = slot(nodes, grads, *a) {
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        s[i] += g[i];
                    }
                }
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let n = nodes[*b].shape[1];
            if let Some(s) = slot(nodes, grads, *a) {
                let bv = &nodes[*b].value;
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bv[p * n + j];
                        }
                        s[i * k + p] += acc;
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *b) {
                let av = &nodes[*a].value;
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        for j in 0..n {
                            s[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (m, n) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            if let Some(s) = slot(nodes, grads, *a) {
                for i in 0..m {
                    for j in 0..n {
                        s[i * n + j] += g[j * m + i];
                    }
                }
            }
        }
        Op::Propagate { adj, h } => {
            let (outer, n, inner) = split_at_axis(&nodes[*h].shape, 3);
            if let Some(s) = slot(nodes, grads, *adj) {
                let hv = &nodes[*h].value;
                for o in 0..outer {
                    for r in 0..n {
                        let gr = &g[(o * n + r) * inner..(o * n + r + 1) * inner];
                        for m in 0..n {
                            let hm = &hv[(o * n + m) * inner..(o * n + m + 1) * inner];
                            s[r * n + m] += gr.iter().zip(hm).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *h) {
                let av = &nodes[*adj].value;
                for o in 0..outer {
                    for r in 0..n {
                        let gr = &g[(o * n + r) * inner..(o * n + r + 1) * inner];
                        for m in 0..n {
                            let a = av[r * n + m];
                            if a == 0.0 {
                                continue;
                            }
                            let sm = &mut s[(o * n + m) * inner..(o * n + m + 1) * inner];
                            sm.iter_mut().zip(gr).for_each(|(s, g)| *s += a * g);
                        }
                    }
                }
            }
        }
        Op::Conv1d { x, w, b, dilation } => {
            let xs = &nodes[*x].shape;
            let (c_in, q) = (xs[xs.len() - 2], xs[xs.len() - 1]);
            let outer: usize = xs[..xs.len() - 2].iter().product();
            let (c_out, width) = (nodes[*w].shape[0], nodes[*w].shape[2]);
            let q_out = node.shape[node.shape.len() - 1];
            let d = *dilation;
            if let Some(bi) = b {
                if let Some(s) = slot(nodes, grads, *bi) {
                    for o in 0..outer {
                        for (c, sc) in s.iter_mut().enumerate().take(c_out) {
                            let base = (o * c_out + c) * q_out;
                            *sc += g[base..base + q_out].iter().sum::<f64>();
                        }
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *w) {
                let xv = &nodes[*x].value;
                for o in 0..outer {
                    for c in 0..c_out {
                        let gb = (o * c_out + c) * q_out;
                        let grow = &g[gb..gb + q_out];
                        for ci in 0..c_in {
                            let xb = (o * c_in + ci) * q;
                            for j in 0..width {
                                let xrow = &xv[xb + j * d..xb + j * d + q_out];
                                s[(c * c_in + ci) * width + j] +=
                                    grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *x) {
                let wv = &nodes[*w].value;
                for o in 0..outer {
                    for c in 0..c_out {
                        let gb = (o * c_out + c) * q_out;
                        let grow = &g[gb..gb + q_out];
                        for ci in 0..c_in {
                            let xb = (o * c_in + ci) * q;
                            for j in 0..width {
                                let wt = wv[(c * c_in + ci) * width + j];
                                if wt == 0.0 {
                                    continue;
                                }
                                let srow = &mut s[xb + j * d..xb + j * d + q_out];
                                srow.iter_mut().zip(grow).for_each(|(s, g)| *s += wt * g);
                            }
                        }
                    }
                }
            }
        }
        Op::FeatureMap { h, map } => {
            let hs = &nodes[*h].shape;
            let (c_in, q) = (hs[hs.len() - 2], hs[hs.len() - 1]);
            let outer: usize = hs[..hs.len() - 2].iter().product();
            let c_out = nodes[*map].shape[1];
            if let Some(s) = slot(nodes, grads, *map) {
                let hv = &nodes[*h].value;
                for o in 0..outer {
                    for d in 0..c_in {
                        let hrow = &hv[(o * c_in + d) * q..(o * c_in + d + 1) * q];
                        for e in 0..c_out {
                            let grow = &g[(o * c_out + e) * q..(o * c_out + e + 1) * q];
                            s[d * c_out + e] += hrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, *h) {
                let mv = &nodes[*map].value;
                for o in 0..outer {
                    for d in 0..c_in {
                        let srow_start = (o * c_in + d) * q;
                        for e in 0..c_out {
                            let m = mv[d * c_out + e];
                            if m == 0.0 {
                                continue;
                            }
                            let grow = &g[(o * c_out + e) * q..(o * c_out + e + 1) * q];
                            let srow = &mut s[srow_start..srow_start + q];
                            srow.iter_mut().zip(grow).for_each(|(s, g)| *s += m * g);
                        }
                    }
                }
            }
        }
        Op::PadLeft(a) => {
            let q = *nodes[*a].shape.last().unwrap();
            let r = *node.shape.last().unwrap();
            if let Some(s) = slot(nodes, grads, *a) {
                let rows = s.len() / q;
                for row in 0..rows {
                    for t in 0..q {
                        s[row * q + t] += g[row * r + (r - q) + t];
                    }
                }
            }
        }
        Op::TruncateLast(a) => {
            let q = *nodes[*a].shape.last().unwrap();
            let keep = *node.shape.last().unwrap();
            if let Some(s) = slot(nodes, grads, *a) {
                let rows = s.len() / q;
                for row in 0..rows {
                    for t in 0..keep {
                        s[row * q + (q - keep) + t] += g[row * keep + t];
                    }
                }
            }
        }
        Op::Concat(parts) => {
            let rank = node.shape.len();
            let q = node.shape[rank - 1];
            let total_c = node.shape[rank - 2];
            let outer: usize = node.shape[..rank - 2].iter().product();
            let mut offset = 0;
            for &p in parts {
                let c = nodes[p].shape[rank - 2];
                if let Some(s) = slot(nodes, grads, p) {
                    for o in 0..outer {
                        let src = (o * total_c + offset) * q;
                        let dst = o * c * q;
                        s[dst..dst + c * q]
                            .iter_mut()
                            .zip(&g[src..src + c * q])
                            .for_each(|(s, g)| *s += g);
                    }
                }
                offset += c;
            }
        }
        Op::Reshape(a) => {
            if let Some(s) = slot(nodes, grads, *a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
        }
        Op::RowNormalize(a) => {
            let n = nodes[*a].shape[0];
            let av = &nodes[*a].value;
            let out = &node.value;
            if let Some(s) = slot(nodes, grads, *a) {
                for i in 0..n {
                    let row_sum: f64 = av[i * n..(i + 1) * n].iter().sum::<f64>() + 1.0;
                    let dot: f64 = (0..n).map(|k| g[i * n + k] * out[i * n + k]).sum();
                    for j in 0..n {
                        s[i * n + j] += (g[i * n + j] - dot) / row_sum;
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(s) = slot(nodes, grads, *a) {
                s.iter_mut().for_each(|s| *s += g[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(s) = slot(nodes, grads, *a) {
                let scale = g[0] / s.len() as f64;
                s.iter_mut().for_each(|s| *s += scale);
            }
        }
        Op::Mae(p, t) => {
            let (pv, tv) = (&nodes[*p].value, &nodes[*t].value);
            let scale = g[0] / pv.len() as f64;
            let sign = |i: usize| {
                let d = pv[i] - tv[i];
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            };
            if let Some(s) = slot(nodes, grads, *p) {
                for (i, si) in s.iter_mut().enumerate() {
                    *si += scale * sign(i);
                }
            }
            if let Some(s) = slot(nodes, grads, *t) {
                for (i, si) in s.iter_mut().enumerate() {
                    *si -= scale * sign(i);
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Detached copy of the current value.
    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape")
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        assert_eq!(nodes[self.id].value.len(), 1, "item() on a non-scalar");
        nodes[self.id].value[0]
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "variables from different tapes");
    }

    fn binary(&self, other: Var<'t>, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return dim_err(format!("{name}: shapes {:?} and {:?} differ", a.shape, b.shape));
            }
            let v = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
            (a.shape.clone(), v)
        };
        Ok(self.tape.var(self.tape.push(shape, value, op, &[self.id, other.id])))
    }

    fn unary(&self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.shape.clone(), a.value.iter().map(|&x| f(x)).collect())
        };
        self.tape.var(self.tape.push(shape, value, op, &[self.id]))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, other: Var<'t>, alpha: f64) -> Result<Var<'t>> {
        self.binary(
            other,
            "add_scaled",
            |a, b| a + alpha * b,
            Op::AddScaled(self.id, other.id, alpha),
        )
    }

    pub fn scale(&self, alpha: f64) -> Var<'t> {
        self.unary(|a| alpha * a, Op::Scale(self.id, alpha))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(f64::tanh, Op::Tanh(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(sigmoid, Op::Sigmoid(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(|a| if a > 0.0 { a } else { 0.0 }, Op::Relu(self.id))
    }

    /// Elementwise product with a constant mask (dropout, top-k selection).
    pub fn mask(&self, mask: Tensor) -> Result<Var<'t>> {
        let m = self.tape.constant(mask);
        self.mul(m)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return dim_err(format!("matmul: {:?} x {:?}", a.shape, b.shape));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = a.value[i * k + p];
                    for j in 0..n {
                        out[i * n + j] += aip * b.value[p * n + j];
                    }
                }
            }
            (vec![m, n], out)
        };
        Ok(self.tape.var(
            self.tape
                .push(shape, value, Op::MatMul(self.id, other.id), &[self.id, other.id]),
        ))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.shape.len() != 2 {
                return dim_err(format!("transpose needs a matrix, got {:?}", a.shape));
            }
            let (m, n) = (a.shape[0], a.shape[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = a.value[i * n + j];
                }
            }
            (vec![n, m], out)
        };
        Ok(self
            .tape
            .var(self.tape.push(shape, value, Op::Transpose(self.id), &[self.id])))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if shape.iter().product::<usize>() != a.value.len() || shape.contains(&0) {
                return dim_err(format!("cannot reshape {:?} into {shape:?}", a.shape));
            }
            a.value.clone()
        };
        Ok(self
            .tape
            .var(self.tape.push(shape.to_vec(), value, Op::Reshape(self.id), &[self.id])))
    }

    pub fn sum(&self) -> Var<'t> {
        let v = self.tape.nodes.borrow()[self.id].value.iter().sum();
        self.tape
            .var(self.tape.push(Vec::new(), vec![v], Op::Sum(self.id), &[self.id]))
    }

    pub fn mean(&self) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            a.iter().sum::<f64>() / a.len() as f64
        };
        self.tape
            .var(self.tape.push(Vec::new(), vec![v], Op::Mean(self.id), &[self.id]))
    }

    /// Left-pads the last axis with zeros to length `len`.
    pub fn pad_left(&self, len: usize) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let Some(&q) = a.shape.last() else {
                return dim_err("pad_left on a scalar");
            };
            if q > len {
                return dim_err(format!("pad_left: time length {q} exceeds target {len}"));
            }
            let rows = a.value.len() / q;
            let mut out = vec![0.0; rows * len];
            for row in 0..rows {
                out[row * len + (len - q)..(row + 1) * len].copy_from_slice(&a.value[row * q..(row + 1) * q]);
            }
            let mut shape = a.shape.clone();
            *shape.last_mut().unwrap() = len;
            (shape, out)
        };
        Ok(self
            .tape
            .var(self.tape.push(shape, value, Op::PadLeft(self.id), &[self.id])))
    }

    /// Keeps the trailing `len` slots of the last axis.
    pub fn truncate_last(&self, len: usize) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let Some(&q) = a.shape.last() else {
                return dim_err("truncate_last on a scalar");
            };
            if len > q || len == 0 {
                return dim_err(format!("truncate_last: cannot keep {len} of {q} slots"));
            }
            let rows = a.value.len() / q;
            let mut out = Vec::with_capacity(rows * len);
            for row in 0..rows {
                out.extend_from_slice(&a.value[row * q + (q - len)..(row + 1) * q]);
            }
            let mut shape = a.shape.clone();
            *shape.last_mut().unwrap() = len;
            (shape, out)
        };
        Ok(self
            .tape
            .var(self.tape.push(shape, value, Op::TruncateLast(self.id), &[self.id])))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[.., n, d, q] = Σ_m adj[n, m] · h[.., m, d, q]`; the time axis is untouched.
pub fn propagate_nodes<'t>(adj: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
    adj.same_tape(&h);
    let tape = adj.tape;
    let (shape, value) = {
        let nodes = tape.nodes.borrow();
        let (a, hn) = (&nodes[adj.id], &nodes[h.id]);
        if a.shape.len() != 2 || a.shape[0] != a.shape[1] {
            return dim_err(format!("propagate_nodes: adjacency {:?} is not square", a.shape));
        }
        if hn.shape.len() < 3 {
            return dim_err(format!("propagate_nodes: states {:?} need rank >= 3", hn.shape));
        }
        let (outer, n, inner) = split_at_axis(&hn.shape, 3);
        if n != a.shape[0] {
            return dim_err(format!(
                "propagate_nodes: adjacency {:?} vs {n} nodes in {:?}",
                a.shape, hn.shape
            ));
        }
        let mut out = vec![0.0; hn.value.len()];
        for o in 0..outer {
            for r in 0..n {
                let dst = (o * n + r) * inner;
                for m in 0..n {
                    let w = a.value[r * n + m];
                    if w == 0.0 {
                        continue;
                    }
                    let src = &hn.value[(o * n + m) * inner..(o * n + m + 1) * inner];
                    out[dst..dst + inner].iter_mut().zip(src).for_each(|(o, s)| *o += w * s);
                }
            }
        }
        (hn.shape.clone(), out)
    };
    Ok(tape.var(tape.push(shape, value, Op::Propagate { adj: adj.id, h: h.id }, &[adj.id, h.id])))
}

/// Valid (unpadded) causal dilated convolution over the last axis.
///
/// `x: [.., C_in, Q]`, `weight: [C_out, C_in, m]`, `bias: [C_out]`. Output
/// slot `t` reads inputs `t, t+δ, .., t+δ(m-1)`; kernel tap `m-1` therefore
/// sees the most recent slot of its window.
pub fn conv1d_dilated<'t>(x: Var<'t>, weight: Var<'t>, bias: Option<Var<'t>>, dilation: usize) -> Result<Var<'t>> {
    x.same_tape(&weight);
    if let Some(b) = &bias {
        x.same_tape(b);
    }
    if dilation == 0 {
        return contract_err("conv1d_dilated: dilation must be positive");
    }
    let tape = x.tape;
    let (shape, value) = {
        let nodes = tape.nodes.borrow();
        let (xn, wn) = (&nodes[x.id], &nodes[weight.id]);
        if xn.shape.len() < 2 || wn.shape.len() != 3 {
            return dim_err(format!("conv1d_dilated: input {:?}, weight {:?}", xn.shape, wn.shape));
        }
        let rank = xn.shape.len();
        let (c_in, q) = (xn.shape[rank - 2], xn.shape[rank - 1]);
        let (c_out, w_in, width) = (wn.shape[0], wn.shape[1], wn.shape[2]);
        if w_in != c_in {
            return dim_err(format!(
                "conv1d_dilated: weight expects {w_in} channels, input has {c_in}"
            ));
        }
        let span = dilation * (width - 1);
        if q < span + 1 {
            return dim_err(format!(
                "conv1d_dilated: length {q} too short for width {width} at dilation {dilation}"
            ));
        }
        let q_out = q - span;
        let bias_v = match bias {
            Some(b) => {
                let bn = &nodes[b.id];
                if bn.shape != [c_out] {
                    return dim_err(format!("conv1d_dilated: bias {:?} vs {c_out} outputs", bn.shape));
                }
                Some(&bn.value)
            }
            None => None,
        };
        let outer: usize = xn.shape[..rank - 2].iter().product();
        let mut out = vec![0.0; outer * c_out * q_out];
        for o in 0..outer {
            for c in 0..c_out {
                let ob = (o * c_out + c) * q_out;
                let orow = &mut out[ob..ob + q_out];
                if let Some(bv) = bias_v {
                    orow.iter_mut().for_each(|v| *v = bv[c]);
                }
                for ci in 0..c_in {
                    let xb = (o * c_in + ci) * q;
                    for j in 0..width {
                        let wt = wn.value[(c * c_in + ci) * width + j];
                        if wt == 0.0 {
                            continue;
                        }
                        let xrow = &xn.value[xb + j * dilation..xb + j * dilation + q_out];
                        orow.iter_mut().zip(xrow).for_each(|(o, x)| *o += wt * x);
                    }
                }
            }
        }
        let mut shape = xn.shape.clone();
        shape[rank - 2] = c_out;
        shape[rank - 1] = q_out;
        (shape, out)
    };
    let mut parents = vec![x.id, weight.id];
    if let Some(b) = bias {
        parents.push(b.id);
    }
    Ok(tape.var(tape.push(
        shape,
        value,
        Op::Conv1d {
            x: x.id,
            w: weight.id,
            b: bias.map(|b| b.id),
            dilation,
        },
        &parents,
    )))
}

/// Right-multiplies the feature axis: `out[.., e, q] = Σ_d h[.., d, q] · map[d, e]`.
pub fn feature_map<'t>(h: Var<'t>, map: Var<'t>) -> Result<Var<'t>> {
    h.same_tape(&map);
    let tape = h.tape;
    let (shape, value) = {
        let nodes = tape.nodes.borrow();
        let (hn, mn) = (&nodes[h.id], &nodes[map.id]);
        if hn.shape.len() < 2 || mn.shape.len() != 2 {
            return dim_err(format!("feature_map: states {:?}, map {:?}", hn.shape, mn.shape));
        }
        let rank = hn.shape.len();
        let (c_in, q) = (hn.shape[rank - 2], hn.shape[rank - 1]);
        if mn.shape[0] != c_in {
            return dim_err(format!("feature_map: map {:?} vs {c_in} features", mn.shape));
        }
        let c_out = mn.shape[1];
        let outer: usize = hn.shape[..rank - 2].iter().product();
        let mut out = vec![0.0; outer * c_out * q];
        for o in 0..outer {
            for d in 0..c_in {
                let hrow = &hn.value[(o * c_in + d) * q..(o * c_in + d + 1) * q];
                for e in 0..c_out {
                    let m = mn.value[d * c_out + e];
                    if m == 0.0 {
                        continue;
                    }
                    let orow = &mut out[(o * c_out + e) * q..(o * c_out + e + 1) * q];
                    orow.iter_mut().zip(hrow).for_each(|(o, h)| *o += m * h);
                }
            }
        }
        let mut shape = hn.shape.clone();
        shape[rank - 2] = c_out;
        (shape, out)
    };
    Ok(tape.var(tape.push(shape, value, Op::FeatureMap { h: h.id, map: map.id }, &[h.id, map.id])))
}

/// Concatenates along the channel (second-to-last) axis.
pub fn concat_channels<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let Some(first) = parts.first() else {
        return contract_err("concat_channels: nothing to concatenate");
    };
    let tape = first.tape;
    let (shape, value) = {
        let nodes = tape.nodes.borrow();
        let base = &nodes[first.id].shape;
        let rank = base.len();
        if rank < 2 {
            return dim_err(format!("concat_channels: rank {rank} < 2"));
        }
        let mut total_c = 0;
        for p in parts {
            first.same_tape(p);
            let s = &nodes[p.id].shape;
            if s.len() != rank || s[..rank - 2] != base[..rank - 2] || s[rank - 1] != base[rank - 1] {
                return dim_err(format!("concat_channels: {s:?} incompatible with {base:?}"));
            }
            total_c += s[rank - 2];
        }
        let q = base[rank - 1];
        let outer: usize = base[..rank - 2].iter().product();
        let mut out = Vec::with_capacity(outer * total_c * q);
        for o in 0..outer {
            for p in parts {
                let n = &nodes[p.id];
                let c = n.shape[rank - 2];
                out.extend_from_slice(&n.value[o * c * q..(o + 1) * c * q]);
            }
        }
        let mut shape = base.clone();
        shape[rank - 2] = total_c;
        (shape, out)
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(tape.var(tape.push(shape, value, Op::Concat(ids.clone()), &ids)))
}

/// `(A + I)` divided by its row sums.
pub fn row_normalize_with_self_loops(adj: Var<'_>) -> Result<Var<'_>> {
    let tape = adj.tape;
    let (shape, value) = {
        let nodes = tape.nodes.borrow();
        let a = &nodes[adj.id];
        if a.shape.len() != 2 || a.shape[0] != a.shape[1] {
            return dim_err(format!("normalize: adjacency {:?} is not square", a.shape));
        }
        let n = a.shape[0];
        let mut out = a.value.clone();
        for i in 0..n {
            out[i * n + i] += 1.0;
            let row_sum: f64 = out[i * n..(i + 1) * n].iter().sum();
            out[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= row_sum);
        }
        (a.shape.clone(), out)
    };
    Ok(tape.var(tape.push(shape, value, Op::RowNormalize(adj.id), &[adj.id])))
}

/// Mean absolute error between equally shaped tensors, as a 0-d variable.
pub fn mae<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    pred.same_tape(&target);
    let tape = pred.tape;
    let v = {
        let nodes = tape.nodes.borrow();
        let (p, t) = (&nodes[pred.id], &nodes[target.id]);
        if p.shape != t.shape {
            return dim_err(format!("mae: shapes {:?} and {:?} differ", p.shape, t.shape));
        }
        p.value.iter().zip(&t.value).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.value.len() as f64
    };
    Ok(tape.var(tape.push(Vec::new(), vec![v], Op::Mae(pred.id, target.id), &[pred.id, target.id])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{assert_grad_matches, rand_tensor};
    use approx::assert_abs_diff_eq;

    #[test]
    fn propagate_identity_and_permutation() {
        let tape = Tape::new();
        let h = tape.constant(Tensor::from_fn(&[2, 2, 3], |i| i as f64));
        let eye = tape.constant(Tensor::identity(2));
        assert_eq!(propagate_nodes(eye, h).unwrap().value(), h.value());

        let swap = tape.constant(Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        let out = propagate_nodes(swap, h).unwrap().value();
        for d in 0..2 {
            for q in 0..3 {
                assert_eq!(out.get(&[0, d, q]), h.value().get(&[1, d, q]));
                assert_eq!(out.get(&[1, d, q]), h.value().get(&[0, d, q]));
            }
        }
    }

    #[test]
    fn propagate_averaging() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::full(&[2, 2], 0.5));
        let h = tape.constant(Tensor::new(vec![2, 1, 1], vec![1.0, 0.0]).unwrap());
        let out = propagate_nodes(a, h).unwrap().value();
        assert_eq!(out.values(), &[0.5, 0.5]);
    }

    #[test]
    fn propagate_rejects_mismatch() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::identity(3));
        let h = tape.constant(Tensor::zeros(&[2, 1, 1]));
        assert!(matches!(propagate_nodes(a, h), Err(crate::Error::Dimension(_))));
        let rect = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(propagate_nodes(rect, h).is_err());
    }

    #[test]
    fn conv_identity_kernel() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[1, 1, 4], |i| i as f64 + 1.0));
        let w = tape.constant(Tensor::full(&[1, 1, 1], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = conv1d_dilated(x, w, Some(b), 1).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn conv_hand_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = tape.constant(Tensor::full(&[1, 1, 2], 1.0));
        let y = conv1d_dilated(x, w, None, 1).unwrap();
        assert_eq!(y.value().values(), &[3.0, 5.0]);
        let y2 = conv1d_dilated(x, w, None, 2).unwrap();
        assert_eq!(y2.shape(), vec![1, 1, 1]);
        assert_eq!(y2.value().values(), &[4.0]);
    }

    #[test]
    fn conv_too_short_is_dimension_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 3]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 3]));
        assert!(matches!(conv1d_dilated(x, w, None, 2), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn activations_at_fixed_points() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        assert_eq!(z.tanh().item(), 0.0);
        assert_eq!(z.sigmoid().item(), 0.5);
        assert_eq!(tape.constant(Tensor::scalar(-1.5)).relu().item(), 0.0);
    }

    #[test]
    fn binary_shape_mismatch() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(a.add(b).is_err());
        assert!(a.mul(b).is_err());
    }

    #[test]
    fn square_and_tanh_derivatives() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::scalar(3.0));
        let loss = x.mul(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);

        let tape = Tape::new();
        let x = tape.param(&Tensor::scalar(0.0));
        let g = tape.backward(x.tanh()).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_accumulates_into_param() {
        let mut p = Tensor::scalar(2.0).with_grad();
        for _ in 0..2 {
            let tape = Tape::new();
            let x = tape.param(&p);
            let loss = x.scale(3.0);
            let g = tape.backward(loss).unwrap();
            g.accumulate_into(x, &mut p).unwrap();
        }
        assert_eq!(p.grad().unwrap(), &[6.0]);
    }

    #[test]
    fn unused_param_gets_zero_grad() {
        let tape = Tape::new();
        let used = tape.param(&Tensor::scalar(1.0));
        let unused = tape.param(&Tensor::scalar(1.0));
        let g = tape.backward(used.tanh()).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused).values(), &[0.0]);
    }

    #[test]
    fn grad_elementwise_ops() {
        let a = rand_tensor(&[3, 4], 1);
        let b = rand_tensor(&[3, 4], 2);
        assert_grad_matches(&[a, b], |_, v| {
            let s = v[0].mul(v[1])?.add(v[0].tanh())?.sub(v[1].sigmoid())?;
            let s = s.add_scaled(v[0].relu(), 0.7)?.scale(1.3);
            Ok(s.mul(s)?.mean())
        });
    }

    #[test]
    fn grad_three_layer_composite() {
        let x = rand_tensor(&[2, 3], 3);
        let w1 = rand_tensor(&[3, 4], 4);
        let w2 = rand_tensor(&[4, 4], 5);
        let w3 = rand_tensor(&[4, 1], 6);
        assert_grad_matches(&[x, w1, w2, w3], |_, v| {
            let h1 = v[0].matmul(v[1])?.tanh();
            let h2 = h1.matmul(v[2])?.sigmoid();
            let h3 = h2.matmul(v[3])?;
            Ok(h3.mul(h3)?.sum())
        });
    }

    #[test]
    fn grad_structured_ops() {
        let adj = rand_tensor(&[3, 3], 7);
        let h = rand_tensor(&[2, 3, 2, 5], 8);
        let w = rand_tensor(&[3, 2, 2], 9);
        let b = rand_tensor(&[3], 10);
        let phi = rand_tensor(&[3, 2], 11);
        assert_grad_matches(&[adj, h, w, b, phi], |_, v| {
            let p = propagate_nodes(v[0], v[1])?;
            let c = conv1d_dilated(p, v[2], Some(v[3]), 2)?.tanh();
            let f = feature_map(c, v[4])?;
            let cat = concat_channels(&[f, c.scale(0.5)])?;
            let padded = cat.pad_left(5)?.truncate_last(4)?;
            Ok(padded.mul(padded)?.mean())
        });
    }

    #[test]
    fn grad_normalize_transpose_reshape_mae() {
        let a = rand_tensor(&[4, 4], 12).map(f64::abs);
        let m = rand_tensor(&[4, 2], 13);
        let target = rand_tensor(&[2, 4], 14);
        assert_grad_matches(&[a, m], move |tape, v| {
            let n = row_normalize_with_self_loops(v[0])?;
            let p = n.matmul(v[1])?.transpose()?;
            let t = tape.constant(target.clone());
            let l = mae(p.reshape(&[2, 4])?, t)?;
            l.add(p.sum().scale(0.1))
        });
    }

    #[test]
    fn normalize_rows_sum_to_one() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::new(vec![2, 2], vec![0.0, 2.0, 0.0, 0.0]).unwrap());
        let n = row_normalize_with_self_loops(a).unwrap().value();
        assert_abs_diff_eq!(n.get(&[0, 0]), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n.get(&[0, 1]), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(n.get(&[1, 1]), 1.0);
    }

    #[test]
    fn mae_hand_value() {
        let tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let t = tape.constant(Tensor::new(vec![2], vec![0.0, 4.0]).unwrap());
        assert_eq!(mae(p, t).unwrap().item(), 1.5);
    }
}
