//! Deterministic inputs shared by the benchmarks.

use stode_core::{ModelConfig, Tensor};

/// Smooth, deterministic input batch `[B, N, D, T]`.
pub fn input_batch(cfg: &ModelConfig, batch: usize) -> Tensor {
    Tensor::from_fn(&[batch, cfg.nodes, cfg.input_dim, cfg.input_len], |k| {
        (0.37 * k as f64).sin()
    })
}

/// Target batch matching the model's output shape.
pub fn target_batch(cfg: &ModelConfig, batch: usize) -> Tensor {
    let mut shape = vec![batch, cfg.nodes];
    shape.extend(cfg.output_tail());
    Tensor::from_fn(&shape, |k| (0.11 * k as f64).cos())
}

/// Node states `[N, D, T]` for diffusion benchmarks.
pub fn node_states(nodes: usize, channels: usize, len: usize) -> Tensor {
    Tensor::from_fn(&[nodes, channels, len], |k| (0.23 * k as f64).sin())
}
