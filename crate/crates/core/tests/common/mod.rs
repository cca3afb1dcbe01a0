//! Shared helpers for integration tests: independent oracles kept away from
//! the implementation paths they check.

#![allow(dead_code)]

use samgda::autodiff::Tensor;
use samgda::nn::{LossFlavor, MlpConfig, MlpModel, Mode};

/// Central finite differences of `f` at `theta`.
pub fn finite_difference(
    f: &mut dyn FnMut(&[f64]) -> f64,
    theta: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; theta.len()];
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = f(&probe);
        probe[i] = theta[i] - h;
        let down = f(&probe);
        probe[i] = theta[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Relative error with a unit floor so near-zero components stay comparable.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Loss of `model` at parameters `theta` on a fixed batch, eval/train mode
/// fixed by the caller. Restores nothing; clones the model per call.
pub fn loss_at(
    model: &MlpModel,
    theta: &[f64],
    x: &Tensor,
    y: &[usize],
    lambda: f64,
    mode: Mode,
) -> f64 {
    let mut m = model.clone();
    m.set_params(theta).unwrap();
    m.loss(x, y, lambda, LossFlavor::Raw, mode).unwrap().total
}

/// Deterministic batch for a model: inputs in [-1, 1], cyclic labels.
pub fn fixed_batch(config: &MlpConfig, batch: usize, salt: u64) -> (Tensor, Vec<usize>) {
    let d = config.input_dim();
    let mut vals = Vec::with_capacity(batch * d);
    let mut state = 0x9e3779b97f4a7c15u64 ^ salt;
    for _ in 0..batch * d {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let u = (state >> 11) as f64 / (1u64 << 53) as f64;
        vals.push(2.0 * u - 1.0);
    }
    let x = Tensor::matrix(batch, d, vals).unwrap();
    let y: Vec<usize> = (0..batch).map(|i| i % config.n_classes()).collect();
    (x, y)
}
