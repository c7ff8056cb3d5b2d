//! Central finite-difference gradient checking.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Comparison of analytic and numerical gradients for one input tensor.
#[derive(Clone, Debug)]
pub struct GradComparison {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradComparison {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, or the absolute
    /// difference norm when both gradients are below `floor`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let diff = self
            .analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = norm(&self.analytic).max(norm(&self.numeric));
        if scale < floor {
            diff
        } else {
            diff / scale
        }
    }
}

/// Evaluates `f` on fresh tapes and compares the reverse-mode gradient of
/// each input with central differences of step `h`.
pub fn compare<F>(inputs: &[Tensor], h: f64, f: F) -> Result<Vec<GradComparison>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.wrt(v).into_values()).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut work: Vec<Tensor> = inputs.iter().map(Tensor::detached).collect();
    let mut out = Vec::with_capacity(inputs.len());
    for (k, analytic) in analytic.into_iter().enumerate() {
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = work[k].values()[i];
            work[k].values_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[k].values_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[k].values_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        out.push(GradComparison { analytic, numeric });
    }
    Ok(out)
}
