//! Fixed-step explicit integrators.
//!
//! The vector field receives the integer step index rather than continuous
//! time; all stages of one RK4 step share the same index. Gradients flow by
//! differentiating through the unrolled steps when the state is a [`Var`].

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{contract_err, dim_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Method::Euler),
            "rk4" | "runge-kutta" => Ok(Method::Rk4),
            other => Err(format!("unknown solver method `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub method: Method,
    pub terminal_time: f64,
    pub step_size: f64,
}

impl SolverSpec {
    pub fn new(method: Method, terminal_time: f64, step_size: f64) -> Result<Self> {
        let spec = SolverSpec {
            method,
            terminal_time,
            step_size,
        };
        spec.steps()?;
        Ok(spec)
    }

    pub fn euler(terminal_time: f64, step_size: f64) -> Result<Self> {
        Self::new(Method::Euler, terminal_time, step_size)
    }

    pub fn rk4(terminal_time: f64, step_size: f64) -> Result<Self> {
        Self::new(Method::Rk4, terminal_time, step_size)
    }

    /// Number of steps `K = terminal_time / step_size`.
    pub fn steps(&self) -> Result<usize> {
        let (t, dt) = (self.terminal_time, self.step_size);
        if !(t.is_finite() && dt.is_finite() && t > 0.0 && dt > 0.0) {
            return contract_err(format!("solver times must be positive, got T={t}, dt={dt}"));
        }
        if dt > t * (1.0 + 1e-12) {
            return contract_err(format!("step size {dt} exceeds terminal time {t}"));
        }
        let ratio = t / dt;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 * k.max(1.0) {
            return contract_err(format!("T/dt = {ratio} is not an integer"));
        }
        Ok(k as usize)
    }
}

/// State types the integrators can advance.
pub trait OdeState: Clone {
    fn state_shape(&self) -> Vec<usize>;

    /// `self + alpha * other`.
    fn add_scaled(&self, other: &Self, alpha: f64) -> Result<Self>;
}

impl OdeState for Tensor {
    fn state_shape(&self) -> Vec<usize> {
        self.shape().to_vec()
    }

    fn add_scaled(&self, other: &Self, alpha: f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return dim_err(format!("add_scaled: {:?} vs {:?}", self.shape(), other.shape()));
        }
        let values = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| a + alpha * b)
            .collect();
        Tensor::new(self.shape().to_vec(), values)
    }
}

impl<'t> OdeState for Var<'t> {
    fn state_shape(&self) -> Vec<usize> {
        self.shape()
    }

    fn add_scaled(&self, other: &Self, alpha: f64) -> Result<Self> {
        Var::add_scaled(self, *other, alpha)
    }
}

fn eval<S, F>(field: &mut F, state: &S, step: usize, shape: &[usize]) -> Result<S>
where
    S: OdeState,
    F: FnMut(&S, usize) -> Result<S>,
{
    let out = field(state, step)?;
    let got = out.state_shape();
    if got != shape {
        return dim_err(format!("vector field changed state shape {shape:?} into {got:?}"));
    }
    Ok(out)
}

fn step<S, F>(field: &mut F, state: &S, index: usize, spec: &SolverSpec, shape: &[usize]) -> Result<S>
where
    S: OdeState,
    F: FnMut(&S, usize) -> Result<S>,
{
    let dt = spec.step_size;
    match spec.method {
        Method::Euler => {
            let k1 = eval(field, state, index, shape)?;
            state.add_scaled(&k1, dt)
        }
        Method::Rk4 => {
            let k1 = eval(field, state, index, shape)?;
            let k2 = eval(field, &state.add_scaled(&k1, 0.5 * dt)?, index, shape)?;
            let k3 = eval(field, &state.add_scaled(&k2, 0.5 * dt)?, index, shape)?;
            let k4 = eval(field, &state.add_scaled(&k3, dt)?, index, shape)?;
            state
                .add_scaled(&k1, dt / 6.0)?
                .add_scaled(&k2, dt / 3.0)?
                .add_scaled(&k3, dt / 3.0)?
                .add_scaled(&k4, dt / 6.0)
        }
    }
}

/// Advances `h0` to `spec.terminal_time`.
pub fn integrate<S, F>(mut field: F, h0: S, spec: &SolverSpec) -> Result<S>
where
    S: OdeState,
    F: FnMut(&S, usize) -> Result<S>,
{
    let k = spec.steps()?;
    let shape = h0.state_shape();
    let mut state = h0;
    for i in 0..k {
        state = step(&mut field, &state, i, spec, &shape)?;
    }
    Ok(state)
}

/// Every grid state `H(i·dt)` for `i = 0..=K`; the last element is
/// bitwise identical to [`integrate`]'s result.
pub fn integrate_trajectory<S, F>(mut field: F, h0: S, spec: &SolverSpec) -> Result<Vec<S>>
where
    S: OdeState,
    F: FnMut(&S, usize) -> Result<S>,
{
    let k = spec.steps()?;
    let shape = h0.state_shape();
    let mut states = Vec::with_capacity(k + 1);
    states.push(h0);
    for i in 0..k {
        let next = step(&mut field, &states[i], i, spec, &shape)?;
        states.push(next);
    }
    Ok(states)
}
