//! The oracle-decomposed optimizer step.
//!
//! Every step runs gradient oracle -> perturbation oracle -> descent oracle
//! for the configured variant, then hands the descent gradient to Adam. The
//! weight-norm penalty enters the perturbation gradient through the loss,
//! while the descent gradient is pure cross-entropy and decay is applied
//! decoupled inside the Adam update.
//!
//! A variant running at rho = 0 degrades to the plain Adam step: one
//! gradient evaluation on the full batch, no perturbation machinery.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{LossFlavor, LossValue, MlpModel, Mode};

use super::adam::{adam_step, OptimizerState};
use super::oracles::{
    dot, esam_masked_perturbation, l2_norm, perturb_asam, perturb_fisher, perturb_friendly,
    perturb_nosam, perturb_sam, select_topk, Perturbation, StepEvent, ZERO_GRAD_EPS,
};
use super::variant::{VariantKind, VariantSpec};

/// One mini-batch of training data (labels are source or pseudo labels).
#[derive(Clone, Copy)]
pub struct TrainBatch<'a> {
    pub x: &'a Tensor,
    pub y: &'a [usize],
}

/// Cost ledger entries for a single step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    /// Gradient evaluations this step (1 or 2).
    pub gradient_evals: u8,
    /// Examples the variant-specific descent gradient was evaluated on.
    pub datapoints_used: usize,
    /// Fraction of parameter coordinates the perturbation touched this step.
    pub layers_perturbed: f64,
}

/// Diagnostics recorded on LookSAM steps.
#[derive(Debug, Clone, Copy)]
pub struct LookSamDiag {
    pub refreshed: bool,
    pub dot_gv_g: f64,
    pub norm_gv: f64,
    pub norm_g: f64,
}

/// Everything observable about one optimizer step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub cost: StepCost,
    /// Loss of the gradient-oracle pass at the unperturbed parameters.
    pub loss_at_theta: LossValue,
    pub descent_grad: Vec<f64>,
    pub events: Vec<StepEvent>,
    pub looksam: Option<LookSamDiag>,
}

/// Run one optimizer step for the configured variant, updating model
/// parameters, optimizer state and batch-norm running statistics.
pub fn sam_outer_step(
    spec: &VariantSpec,
    state: &mut OptimizerState,
    model: &mut MlpModel,
    batch: TrainBatch,
    lr: f64,
    weight_decay: f64,
    dropout_seed: u64,
) -> Result<StepOutcome> {
    if batch.x.rows() == 0 || batch.y.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    if batch.x.rows() != batch.y.len() {
        return Err(Error::ShapeMismatch {
            op: "sam_outer_step",
            detail: format!("{} rows vs {} labels", batch.x.rows(), batch.y.len()),
        });
    }
    let mode = Mode::Train { dropout_seed };
    let rho = spec.effective_rho();
    let b = batch.x.rows();
    let k = model.k();
    let mut events = Vec::new();

    // rho = 0 (or kind = Adam): plain base-optimizer step
    if rho == 0.0 {
        let pass = model.loss_and_grad(batch.x, batch.y, 0.0, LossFlavor::Raw, mode)?;
        model.update_running_stats(&pass.bn_stats);
        let mut theta = model.param_view().values().to_vec();
        adam_step(state, &mut theta, &pass.grad, lr, weight_decay)?;
        model.set_params(&theta)?;
        return Ok(StepOutcome {
            cost: StepCost {
                gradient_evals: 1,
                datapoints_used: b,
                layers_perturbed: 0.0,
            },
            loss_at_theta: pass.loss,
            descent_grad: pass.grad,
            events,
            looksam: None,
        });
    }

    let theta0 = model.param_view().values().to_vec();
    let mut looksam = None;

    // K-SAM gets its own flow: selection on current-theta losses, then both
    // gradient evaluations on the selected subset.
    let (loss_at_theta, descent_grad, cost) = if spec.kind == VariantKind::KSam {
        let (sel_loss, stats) =
            model.loss_with_stats(batch.x, batch.y, weight_decay, LossFlavor::Raw, mode)?;
        model.update_running_stats(&stats);
        let k_top = spec.k_top(b);
        let kept = select_topk(&sel_loss.per_example, k_top)?;
        let sub_x = batch.x.gather_rows(&kept)?;
        let sub_y: Vec<usize> = kept.iter().map(|&i| batch.y[i]).collect();

        let g_pass = model.loss_and_grad(&sub_x, &sub_y, weight_decay, LossFlavor::Raw, mode)?;
        let perturbation = perturb_sam(&g_pass.grad, rho);
        record(&mut events, &perturbation);
        let descent = descend_at(
            model,
            &theta0,
            &perturbation.beta,
            &sub_x,
            &sub_y,
            mode,
        )?;
        (
            sel_loss,
            descent,
            StepCost {
                gradient_evals: 2,
                datapoints_used: kept.len(),
                layers_perturbed: 1.0,
            },
        )
    } else {
        // gradient oracle on the full batch, penalty included
        let g_pass = model.loss_and_grad(batch.x, batch.y, weight_decay, LossFlavor::Raw, mode)?;
        model.update_running_stats(&g_pass.bn_stats);
        let g = g_pass.grad;

        match spec.kind {
            VariantKind::LookSam => {
                let period = spec.period();
                if state.t % period == 0 {
                    // refresh: full SAM step plus cache of the orthogonal component
                    let perturbation = perturb_sam(&g, rho);
                    record(&mut events, &perturbation);
                    let g_sam =
                        descend_at(model, &theta0, &perturbation.beta, batch.x, batch.y, mode)?;
                    let g_norm_sq = dot(&g, &g);
                    let coeff = if g_norm_sq > 0.0 {
                        dot(&g, &g_sam) / g_norm_sq
                    } else {
                        0.0
                    };
                    let g_v: Vec<f64> =
                        g_sam.iter().zip(&g).map(|(s, gi)| s - gi * coeff).collect();
                    looksam = Some(LookSamDiag {
                        refreshed: true,
                        dot_gv_g: dot(&g_v, &g),
                        norm_gv: l2_norm(&g_v),
                        norm_g: l2_norm(&g),
                    });
                    state.look_cached = Some(g_v);
                    (
                        g_pass.loss,
                        g_sam,
                        StepCost {
                            gradient_evals: 2,
                            datapoints_used: b,
                            layers_perturbed: 1.0,
                        },
                    )
                } else {
                    // reuse: descend along g plus the rescaled cached direction
                    let cached = state.look_cached.clone().unwrap_or_else(|| vec![0.0; k]);
                    let norm_gv = l2_norm(&cached);
                    let descent = if norm_gv < ZERO_GRAD_EPS {
                        events.push(StepEvent::ZeroCachedDirection);
                        g.clone()
                    } else {
                        let scale = spec.alpha() * l2_norm(&g) / norm_gv;
                        g.iter().zip(&cached).map(|(gi, v)| gi + scale * v).collect()
                    };
                    looksam = Some(LookSamDiag {
                        refreshed: false,
                        dot_gv_g: dot(&cached, &g),
                        norm_gv,
                        norm_g: l2_norm(&g),
                    });
                    (
                        g_pass.loss,
                        descent,
                        StepCost {
                            gradient_evals: 1,
                            datapoints_used: b,
                            layers_perturbed: 0.0,
                        },
                    )
                }
            }
            VariantKind::Esam => {
                let xi = spec.xi();
                let (perturbation, fraction) =
                    esam_masked_perturbation(&g, rho, xi, &mut state.rng);
                record(&mut events, &perturbation);
                // sharpness-sensitive selection: keep the examples whose loss
                // rises the most under the perturbation
                let theta_pert = add(&theta0, &perturbation.beta);
                model.set_params(&theta_pert)?;
                let (pert_loss, _) =
                    model.loss_with_stats(batch.x, batch.y, 0.0, LossFlavor::Raw, mode)?;
                model.set_params(&theta0)?;
                let increases: Vec<f64> = pert_loss
                    .per_example
                    .iter()
                    .zip(&g_pass.loss.per_example)
                    .map(|(after, before)| after - before)
                    .collect();
                let keep_n = ((spec.gamma() * b as f64).ceil() as usize).clamp(1, b);
                if keep_n == 0 {
                    events.push(StepEvent::EmptySelection);
                }
                let kept = select_topk(&increases, keep_n)?;
                let sub_x = batch.x.gather_rows(&kept)?;
                let sub_y: Vec<usize> = kept.iter().map(|&i| batch.y[i]).collect();
                let descent =
                    descend_at(model, &theta0, &perturbation.beta, &sub_x, &sub_y, mode)?;
                (
                    g_pass.loss,
                    descent,
                    StepCost {
                        gradient_evals: 2,
                        datapoints_used: kept.len(),
                        layers_perturbed: fraction,
                    },
                )
            }
            _ => {
                let perturbation = match spec.kind {
                    VariantKind::Sam => perturb_sam(&g, rho),
                    VariantKind::Asam => perturb_asam(model.param_view(), &g, rho)?,
                    VariantKind::FisherSam => perturb_fisher(&g, rho, spec.eta()),
                    VariantKind::FriendlySam => perturb_friendly(
                        &mut state.friendly_ema,
                        &g,
                        rho,
                        spec.sigma(),
                        spec.phi(),
                    ),
                    VariantKind::NoSam => perturb_nosam(model.param_view(), &g, rho)?,
                    _ => unreachable!("handled above"),
                };
                record(&mut events, &perturbation);
                let fraction = match spec.kind {
                    VariantKind::NoSam => {
                        let norm = model.param_view().norm_indices().len();
                        norm as f64 / k as f64
                    }
                    _ => 1.0,
                };
                let descent =
                    descend_at(model, &theta0, &perturbation.beta, batch.x, batch.y, mode)?;
                (
                    g_pass.loss,
                    descent,
                    StepCost {
                        gradient_evals: 2,
                        datapoints_used: b,
                        layers_perturbed: fraction,
                    },
                )
            }
        }
    };

    for event in &events {
        state.events.record(*event);
    }
    let mut theta = theta0;
    adam_step(state, &mut theta, &descent_grad, lr, weight_decay)?;
    model.set_params(&theta)?;
    Ok(StepOutcome {
        cost,
        loss_at_theta,
        descent_grad,
        events,
        looksam,
    })
}

// Pure cross-entropy gradient at theta + beta, with theta restored after.
fn descend_at(
    model: &mut MlpModel,
    theta: &[f64],
    beta: &[f64],
    x: &Tensor,
    y: &[usize],
    mode: Mode,
) -> Result<Vec<f64>> {
    let perturbed = add(theta, beta);
    model.set_params(&perturbed)?;
    let pass = model.loss_and_grad(x, y, 0.0, LossFlavor::Raw, mode);
    model.set_params(theta)?;
    Ok(pass?.grad)
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn record(events: &mut Vec<StepEvent>, p: &Perturbation) {
    if let Some(e) = p.event {
        events.push(e);
    }
}

