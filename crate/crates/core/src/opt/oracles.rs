//! Perturbation oracles and selection rules for the SAM variants.
//!
//! All oracles share one norm/scale code path so that the reduction
//! identities (FisherSAM at eta=0, FriendlySAM at sigma=0, ...) hold bit
//! for bit, not just numerically.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ParamRole, ParamVector};

/// Gradient norms below this are treated as degenerate.
pub const ZERO_GRAD_EPS: f64 = 1e-12;

/// Countable degenerate events. Fallbacks are never silent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    ZeroGradient,
    ZeroCachedDirection,
    NoNormLayers,
    EmptySelection,
    MaskAllZero,
}

/// A perturbation with any degenerate-input event that fired while
/// computing it. A fired event always means `beta` is all zeros.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub beta: Vec<f64>,
    pub event: Option<StepEvent>,
}

impl Perturbation {
    fn zero(k: usize, event: Option<StepEvent>) -> Self {
        Perturbation {
            beta: vec![0.0; k],
            event,
        }
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// First-order ascent direction scaled to the radius: `rho * g / ||g||`.
pub fn perturb_sam(g: &[f64], rho: f64) -> Perturbation {
    if rho == 0.0 {
        return Perturbation::zero(g.len(), None);
    }
    let norm = l2_norm(g);
    if norm < ZERO_GRAD_EPS {
        return Perturbation::zero(g.len(), Some(StepEvent::ZeroGradient));
    }
    let scale = rho / norm;
    Perturbation {
        beta: g.iter().map(|x| scale * x).collect(),
        event: None,
    }
}

/// Scale-adaptive perturbation `rho * T^2 g / ||T g||` with `T_i = |theta_i|`
/// on weight coordinates and `T_i = 1` elsewhere.
pub fn perturb_asam(theta: &ParamVector, g: &[f64], rho: f64) -> Result<Perturbation> {
    if g.len() != theta.k() {
        return Err(Error::LengthMismatch {
            expected: theta.k(),
            got: g.len(),
        });
    }
    if rho == 0.0 {
        return Ok(Perturbation::zero(g.len(), None));
    }
    let roles = theta.role_per_coordinate();
    let tv: Vec<f64> = theta
        .values()
        .iter()
        .zip(&roles)
        .map(|(&t, &r)| if r == ParamRole::Weight { t.abs() } else { 1.0 })
        .collect();
    let norm = {
        let mut s = 0.0;
        for (t, x) in tv.iter().zip(g) {
            let tg = t * x;
            s += tg * tg;
        }
        s.sqrt()
    };
    if norm < ZERO_GRAD_EPS {
        return Ok(Perturbation::zero(g.len(), Some(StepEvent::ZeroGradient)));
    }
    let scale = rho / norm;
    Ok(Perturbation {
        beta: tv.iter().zip(g).map(|(t, x)| scale * (t * t * x)).collect(),
        event: None,
    })
}

/// Fisher-preconditioned perturbation with the damped diagonal
/// `D = diag(1 / (1 + eta g_i^2))`: `beta = rho * D g / sqrt(g' D g)`.
pub fn perturb_fisher(g: &[f64], rho: f64, eta: f64) -> Perturbation {
    if rho == 0.0 {
        return Perturbation::zero(g.len(), None);
    }
    let dg: Vec<f64> = g.iter().map(|&x| x / (1.0 + eta * (x * x))).collect();
    let quad: f64 = g.iter().zip(&dg).map(|(x, d)| x * d).sum();
    let norm = quad.sqrt();
    if norm < ZERO_GRAD_EPS {
        return Perturbation::zero(g.len(), Some(StepEvent::ZeroGradient));
    }
    let scale = rho / norm;
    Perturbation {
        beta: dg.iter().map(|d| scale * d).collect(),
        event: None,
    }
}

/// Perturbation along the mini-batch gradient with its EMA component
/// projected out: `m' = phi m + (1-phi) g`, `d = g - sigma m'`,
/// `beta = rho d / ||d||`. Updates the EMA in place even when degenerate.
pub fn perturb_friendly(
    ema: &mut [f64],
    g: &[f64],
    rho: f64,
    sigma: f64,
    phi: f64,
) -> Perturbation {
    for (m, &x) in ema.iter_mut().zip(g) {
        *m = phi * *m + (1.0 - phi) * x;
    }
    if rho == 0.0 {
        return Perturbation::zero(g.len(), None);
    }
    let d: Vec<f64> = g.iter().zip(ema.iter()).map(|(&x, &m)| x - sigma * m).collect();
    let norm = l2_norm(&d);
    if norm < ZERO_GRAD_EPS {
        return Perturbation::zero(g.len(), Some(StepEvent::ZeroGradient));
    }
    let scale = rho / norm;
    Perturbation {
        beta: d.iter().map(|x| scale * x).collect(),
        event: None,
    }
}

/// SAM perturbation restricted to normalization-layer coordinates,
/// normalized over that sub-vector; zero elsewhere.
pub fn perturb_nosam(theta: &ParamVector, g: &[f64], rho: f64) -> Result<Perturbation> {
    if g.len() != theta.k() {
        return Err(Error::LengthMismatch {
            expected: theta.k(),
            got: g.len(),
        });
    }
    if rho == 0.0 {
        return Ok(Perturbation::zero(g.len(), None));
    }
    let idx = theta.norm_indices();
    if idx.is_empty() {
        return Ok(Perturbation::zero(g.len(), Some(StepEvent::NoNormLayers)));
    }
    let norm = idx.iter().map(|&i| g[i] * g[i]).sum::<f64>().sqrt();
    if norm < ZERO_GRAD_EPS {
        return Ok(Perturbation::zero(g.len(), Some(StepEvent::ZeroGradient)));
    }
    let scale = rho / norm;
    let mut beta = vec![0.0; g.len()];
    for &i in &idx {
        beta[i] = scale * g[i];
    }
    Ok(Perturbation { beta, event: None })
}

/// Indices of the K largest losses, ties broken toward the lower index,
/// returned in ascending order.
pub fn select_topk(losses: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > losses.len() {
        return Err(Error::KOutOfRange {
            k,
            b: losses.len(),
        });
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Stochastic coordinate mask applied to a SAM perturbation: each coordinate
/// kept with probability xi and rescaled by `1/sqrt(xi)` so the expected
/// squared norm stays `rho^2`.
pub fn esam_masked_perturbation(
    g: &[f64],
    rho: f64,
    xi: f64,
    rng: &mut ChaCha8Rng,
) -> (Perturbation, f64) {
    let mask: Vec<bool> = (0..g.len()).map(|_| rng.random::<f64>() < xi).collect();
    let kept = mask.iter().filter(|&&m| m).count();
    let fraction = kept as f64 / g.len().max(1) as f64;
    let base = perturb_sam(g, rho);
    if base.event.is_some() {
        return (base, fraction);
    }
    if kept == 0 {
        return (
            Perturbation::zero(g.len(), Some(StepEvent::MaskAllZero)),
            fraction,
        );
    }
    let inv_sqrt_xi = 1.0 / xi.sqrt();
    let beta = base
        .beta
        .iter()
        .zip(&mask)
        .map(|(&b, &m)| if m { b * inv_sqrt_xi } else { 0.0 })
        .collect();
    (
        Perturbation { beta, event: None },
        fraction,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Segment;

    fn weights_only(values: Vec<f64>) -> ParamVector {
        let seg = Segment {
            offset: 0,
            len: values.len(),
            role: ParamRole::Weight,
            layer_index: 0,
        };
        ParamVector::new(values, vec![seg]).unwrap()
    }

    fn bias_only(values: Vec<f64>) -> ParamVector {
        let seg = Segment {
            offset: 0,
            len: values.len(),
            role: ParamRole::Bias,
            layer_index: 0,
        };
        ParamVector::new(values, vec![seg]).unwrap()
    }

    #[test]
    fn sam_direct_formula() {
        let p = perturb_sam(&[3.0, 4.0], 0.1);
        assert!((p.beta[0] - 0.06).abs() < 1e-15);
        assert!((p.beta[1] - 0.08).abs() < 1e-15);
        assert!(p.event.is_none());
    }

    #[test]
    fn sam_zero_radius_and_zero_gradient() {
        let p = perturb_sam(&[3.0, 4.0], 0.0);
        assert_eq!(p.beta, vec![0.0, 0.0]);
        assert!(p.event.is_none());
        let p = perturb_sam(&[0.0, 0.0], 0.1);
        assert_eq!(p.beta, vec![0.0, 0.0]);
        assert_eq!(p.event, Some(StepEvent::ZeroGradient));
    }

    #[test]
    fn asam_direct_formula() {
        // theta=(2,-1) weights, g=(1,1), rho=0.5: T^2 g=(4,1), ||Tg||=sqrt(5)
        let theta = weights_only(vec![2.0, -1.0]);
        let p = perturb_asam(&theta, &[1.0, 1.0], 0.5).unwrap();
        assert!((p.beta[0] - 0.5 * 4.0 / 5.0f64.sqrt()).abs() < 1e-12);
        assert!((p.beta[1] - 0.5 * 1.0 / 5.0f64.sqrt()).abs() < 1e-12);
        assert!((p.beta[0] - 0.8944).abs() < 1e-4);
        assert!((p.beta[1] - 0.2236).abs() < 1e-4);
    }

    #[test]
    fn asam_on_all_bias_params_equals_sam() {
        let theta = bias_only(vec![0.3, -0.8, 0.1]);
        let g = [0.5, -0.2, 0.9];
        let a = perturb_asam(&theta, &g, 0.25).unwrap();
        let s = perturb_sam(&g, 0.25);
        assert_eq!(a.beta, s.beta);
    }

    #[test]
    fn asam_zero_weight_coordinate_gets_zero_beta() {
        let theta = weights_only(vec![0.0, 1.0]);
        let p = perturb_asam(&theta, &[5.0, 1.0], 0.5).unwrap();
        assert_eq!(p.beta[0], 0.0);
    }

    #[test]
    fn asam_direction_invariant_under_weight_rescale() {
        // theta scaled by c with g scaled by 1/c keeps the direction, up to scale c
        let theta1 = weights_only(vec![2.0, -1.5]);
        let g1 = [0.4, 0.7];
        let c = 3.0;
        let theta2 = weights_only(vec![2.0 * c, -1.5 * c]);
        let g2 = [0.4 / c, 0.7 / c];
        let p1 = perturb_asam(&theta1, &g1, 0.5).unwrap();
        let p2 = perturb_asam(&theta2, &g2, 0.5).unwrap();
        for (a, b) in p1.beta.iter().zip(&p2.beta) {
            assert!((b - a * c).abs() < 1e-12, "{b} vs {}", a * c);
        }
    }

    #[test]
    fn fisher_eta_zero_equals_sam_bitwise() {
        let g = [0.3, -1.7, 0.0002, 5.0];
        let f = perturb_fisher(&g, 0.2, 0.0);
        let s = perturb_sam(&g, 0.2);
        assert_eq!(f.beta, s.beta);
    }

    #[test]
    fn fisher_direct_formula() {
        // g=(1,2), eta=1: D=diag(1/2,1/5), Dg=(0.5,0.4), g'Dg=1.3
        let p = perturb_fisher(&[1.0, 2.0], 0.3, 1.0);
        let scale = 0.3 / 1.3f64.sqrt();
        assert!((p.beta[0] - scale * 0.5).abs() < 1e-15);
        assert!((p.beta[1] - scale * 0.4).abs() < 1e-15);
    }

    #[test]
    fn fisher_large_eta_shifts_mass_to_small_gradients() {
        let g = [0.1, 2.0];
        let small = perturb_fisher(&g, 1.0, 0.1);
        let large = perturb_fisher(&g, 1.0, 100.0);
        let ratio_small = small.beta[0].abs() / small.beta[1].abs();
        let ratio_large = large.beta[0].abs() / large.beta[1].abs();
        assert!(ratio_large > ratio_small);
    }

    #[test]
    fn friendly_sigma_zero_equals_sam_but_updates_ema() {
        let g = [0.4, -0.9];
        let mut ema = vec![0.0, 0.0];
        let p = perturb_friendly(&mut ema, &g, 0.1, 0.0, 0.9);
        let s = perturb_sam(&g, 0.1);
        assert_eq!(p.beta, s.beta);
        assert!((ema[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn friendly_first_step_direction_matches_sam() {
        // m=0, sigma=1, phi=0.9: d = g - 0.1 g = 0.9 g, direction is g
        let g = [1.0, 2.0];
        let mut ema = vec![0.0, 0.0];
        let p = perturb_friendly(&mut ema, &g, 0.5, 1.0, 0.9);
        let s = perturb_sam(&g, 0.5);
        for (a, b) in p.beta.iter().zip(&s.beta) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn friendly_full_cancellation_is_degenerate() {
        // sigma=1, phi=0: m' = g, d = 0
        let g = [0.4, -0.9];
        let mut ema = vec![0.0, 0.0];
        let p = perturb_friendly(&mut ema, &g, 0.1, 1.0, 0.0);
        assert_eq!(p.event, Some(StepEvent::ZeroGradient));
        assert!(p.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn nosam_masks_to_norm_coordinates() {
        let segs = vec![
            Segment { offset: 0, len: 2, role: ParamRole::Weight, layer_index: 0 },
            Segment { offset: 2, len: 2, role: ParamRole::NormScale, layer_index: 0 },
        ];
        let theta = ParamVector::new(vec![1.0, 1.0, 1.0, 1.0], segs).unwrap();
        let g = [9.0, 9.0, 3.0, 4.0];
        let p = perturb_nosam(&theta, &g, 0.1).unwrap();
        assert_eq!(p.beta[0], 0.0);
        assert_eq!(p.beta[1], 0.0);
        assert!((p.beta[2] - 0.06).abs() < 1e-15);
        assert!((p.beta[3] - 0.08).abs() < 1e-15);
        let masked_norm = (p.beta[2] * p.beta[2] + p.beta[3] * p.beta[3]).sqrt();
        assert!((masked_norm - 0.1).abs() < 1e-12);
    }

    #[test]
    fn nosam_without_norm_layers_fires_event() {
        let theta = weights_only(vec![1.0, 2.0]);
        let p = perturb_nosam(&theta, &[1.0, 1.0], 0.1).unwrap();
        assert_eq!(p.event, Some(StepEvent::NoNormLayers));
        assert!(p.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn topk_selection() {
        assert_eq!(select_topk(&[0.1, 0.9, 0.5], 2).unwrap(), vec![1, 2]);
        // K=B keeps everything in original order
        assert_eq!(select_topk(&[0.1, 0.9, 0.5], 3).unwrap(), vec![0, 1, 2]);
        // all-equal losses, K=1: lower index wins the tie
        assert_eq!(select_topk(&[0.3, 0.3, 0.3], 1).unwrap(), vec![0]);
        assert!(select_topk(&[0.1], 2).is_err());
        assert!(select_topk(&[0.1], 0).is_err());
    }

    #[test]
    fn esam_full_inclusion_equals_sam_bitwise() {
        use rand_chacha::rand_core::SeedableRng;
        let g = [0.3, -0.8, 1.9];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, fraction) = esam_masked_perturbation(&g, 0.2, 1.0, &mut rng);
        assert_eq!(fraction, 1.0);
        assert_eq!(p.beta, perturb_sam(&g, 0.2).beta);
    }
}
