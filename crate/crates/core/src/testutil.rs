use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::gradcheck;
use crate::tensor::Tensor;

/// Uniform values in [-1, 1].
pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..=1.0))
}

pub fn assert_grad_matches<F>(inputs: &[Tensor], f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let cmp = gradcheck::compare(inputs, 1e-5, f).unwrap();
    for (k, c) in cmp.iter().enumerate() {
        let err = c.relative_error(1e-10);
        assert!(
            err < 1e-4,
            "input {k}: relative error {err:e}\nanalytic {:?}\nnumeric  {:?}",
            c.analytic,
            c.numeric
        );
    }
}
