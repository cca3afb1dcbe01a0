//! Adam base optimizer with decoupled weight decay.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::oracles::StepEvent;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Cumulative counts of degenerate-fallback events over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounters {
    pub zero_gradient: u64,
    pub zero_cached_direction: u64,
    pub no_norm_layers: u64,
    pub empty_selection: u64,
    pub mask_all_zero: u64,
}

impl EventCounters {
    pub fn record(&mut self, event: StepEvent) {
        match event {
            StepEvent::ZeroGradient => self.zero_gradient += 1,
            StepEvent::ZeroCachedDirection => self.zero_cached_direction += 1,
            StepEvent::NoNormLayers => self.no_norm_layers += 1,
            StepEvent::EmptySelection => self.empty_selection += 1,
            StepEvent::MaskAllZero => self.mask_all_zero += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.zero_gradient
            + self.zero_cached_direction
            + self.no_norm_layers
            + self.empty_selection
            + self.mask_all_zero
    }
}

/// Mutable optimizer state for one training run.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    /// LookSAM cached reuse direction g_v.
    pub look_cached: Option<Vec<f64>>,
    /// FriendlySAM gradient EMA.
    pub friendly_ema: Vec<f64>,
    /// Stream for stochastic oracles (ESAM coordinate masks).
    pub rng: ChaCha8Rng,
    pub events: EventCounters,
}

impl OptimizerState {
    pub fn new(k: usize, seed: u64) -> Self {
        OptimizerState {
            m: vec![0.0; k],
            v: vec![0.0; k],
            t: 0,
            look_cached: None,
            friendly_ema: vec![0.0; k],
            rng: ChaCha8Rng::seed_from_u64(seed),
            events: EventCounters::default(),
        }
    }

    pub fn k(&self) -> usize {
        self.m.len()
    }
}

/// One bias-corrected Adam update with decoupled weight decay:
/// `theta <- theta * (1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    state: &mut OptimizerState,
    theta: &mut [f64],
    grad: &[f64],
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if theta.len() != state.k() || grad.len() != state.k() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            detail: format!(
                "state k={}, theta {}, grad {}",
                state.k(),
                theta.len(),
                grad.len()
            ),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..theta.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grad[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] = theta[i] * (1.0 - lr * weight_decay) - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}
