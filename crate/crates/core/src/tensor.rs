//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] is a plain value container. Tensors that take part in
//! optimisation carry a gradient buffer of identical shape; gradients are
//! produced by the [`crate::autodiff`] tape and accumulated here.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return dim_err(format!("shape {shape:?} has a zero-sized dimension"));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return dim_err(format!("shape {shape:?} needs {expected} values, got {}", values.len()));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "shape {shape:?} has a zero-sized dimension"
        );
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![value; len],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            values: vec![value],
            grad: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a tensor by evaluating `f` at every flat (row-major) index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let len: usize = shape.iter().product();
        let values = (0..len).map(f).collect();
        Tensor::new(shape.to_vec(), values).expect("from_fn shape")
    }

    /// Marks the tensor as trainable, allocating a zeroed gradient buffer.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![0.0; self.values.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        let grad = self
            .grad
            .as_mut()
            .ok_or_else(|| Error::Contract("accumulating gradient into a tensor without requires_grad".into()))?;
        if grad.len() != delta.len() {
            return dim_err(format!(
                "gradient of length {} for tensor of length {}",
                delta.len(),
                grad.len()
            ));
        }
        grad.iter_mut().zip(delta).for_each(|(g, d)| *g += d);
        Ok(())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.values.len() || shape.contains(&0) {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.values[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let i = self.flat_index(index);
        self.values[i] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Drops the gradient buffer, returning a detached copy of the values.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.clone(),
            grad: None,
        }
    }
}
