//! Reduction identities between variants, bit-exact on shared seeds, plus
//! LookSAM diagnostics on a toy run.

mod common;

use common::fixed_batch;
use samgda::autodiff::Tensor;
use samgda::nn::{MlpConfig, MlpModel};
use samgda::opt::{sam_outer_step, OptimizerState, TrainBatch, VariantKind, VariantSpec};
use samgda::seeding;

const LR: f64 = 1e-2;
const WD: f64 = 1e-4;

fn toy_config() -> MlpConfig {
    MlpConfig {
        widths: vec![2, 8, 2],
        use_batchnorm: true,
        dropout_rate: 0.2,
    }
}

/// Run `steps` optimizer steps on cycling fixed batches and return the
/// parameter trajectory (one snapshot per step).
fn run_trajectory(spec: &VariantSpec, steps: usize, seed: u64) -> Vec<Vec<f64>> {
    let config = toy_config();
    let mut model = MlpModel::new(config.clone(), seed).unwrap();
    let mut state = OptimizerState::new(model.k(), seeding::mix(seed, &[77]));
    let batches: Vec<(Tensor, Vec<usize>)> =
        (0..4).map(|i| fixed_batch(&config, 16, seed ^ i)).collect();
    let mut trajectory = Vec::with_capacity(steps);
    for step in 0..steps {
        let (x, y) = &batches[step % batches.len()];
        let dropout_seed = seeding::mix(seed, &[seeding::TAG_DROPOUT, step as u64]);
        sam_outer_step(
            spec,
            &mut state,
            &mut model,
            TrainBatch { x, y },
            LR,
            WD,
            dropout_seed,
        )
        .unwrap();
        trajectory.push(model.param_view().values().to_vec());
    }
    trajectory
}

fn assert_identical_trajectories(a: &VariantSpec, b: &VariantSpec, steps: usize) {
    let ta = run_trajectory(a, steps, 42);
    let tb = run_trajectory(b, steps, 42);
    for (step, (pa, pb)) in ta.iter().zip(&tb).enumerate() {
        assert_eq!(
            pa, pb,
            "{:?} vs {:?} diverged at step {step}",
            a.kind, b.kind
        );
    }
}

#[test]
fn fisher_with_zero_eta_equals_sam() {
    let sam = VariantSpec::new(VariantKind::Sam, 0.05);
    let mut fisher = VariantSpec::new(VariantKind::FisherSam, 0.05);
    fisher.eta = Some(0.0);
    assert_identical_trajectories(&fisher, &sam, 12);
}

#[test]
fn friendly_with_zero_sigma_equals_sam() {
    let sam = VariantSpec::new(VariantKind::Sam, 0.05);
    let mut friendly = VariantSpec::new(VariantKind::FriendlySam, 0.05);
    friendly.sigma = Some(0.0);
    friendly.phi = Some(0.9);
    assert_identical_trajectories(&friendly, &sam, 12);
}

#[test]
fn ksam_with_full_batch_equals_sam() {
    let sam = VariantSpec::new(VariantKind::Sam, 0.05);
    let mut ksam = VariantSpec::new(VariantKind::KSam, 0.05);
    ksam.k = Some(16); // batch size in run_trajectory
    assert_identical_trajectories(&ksam, &sam, 12);
}

#[test]
fn esam_with_full_inclusion_and_selection_equals_sam() {
    let sam = VariantSpec::new(VariantKind::Sam, 0.05);
    let mut esam = VariantSpec::new(VariantKind::Esam, 0.05);
    esam.xi = Some(1.0);
    esam.gamma = Some(1.0);
    assert_identical_trajectories(&esam, &sam, 12);
}

#[test]
fn looksam_with_period_one_equals_sam() {
    let sam = VariantSpec::new(VariantKind::Sam, 0.05);
    let mut looksam = VariantSpec::new(VariantKind::LookSam, 0.05);
    looksam.period = Some(1);
    looksam.alpha = Some(0.7);
    assert_identical_trajectories(&looksam, &sam, 12);
}

#[test]
fn any_variant_at_zero_rho_equals_adam() {
    let adam = VariantSpec::new(VariantKind::Adam, 0.0);
    for kind in [
        VariantKind::Sam,
        VariantKind::Asam,
        VariantKind::FisherSam,
        VariantKind::KSam,
        VariantKind::LookSam,
        VariantKind::FriendlySam,
        VariantKind::NoSam,
        VariantKind::Esam,
    ] {
        let spec = VariantSpec::new(kind, 0.0);
        assert_identical_trajectories(&spec, &adam, 8);
    }
}

#[test]
fn looksam_cached_direction_is_orthogonal_at_refresh() {
    let config = toy_config();
    let mut spec = VariantSpec::new(VariantKind::LookSam, 0.05);
    spec.period = Some(5);
    spec.alpha = Some(0.7);
    let mut model = MlpModel::new(config.clone(), 9).unwrap();
    let mut state = OptimizerState::new(model.k(), 123);
    let batches: Vec<(Tensor, Vec<usize>)> =
        (0..5).map(|i| fixed_batch(&config, 16, 500 + i)).collect();
    let mut refreshes = 0;
    for step in 0..50usize {
        let (x, y) = &batches[step % batches.len()];
        let out = sam_outer_step(
            &mut spec.clone(),
            &mut state,
            &mut model,
            TrainBatch { x, y },
            LR,
            WD,
            seeding::mix(9, &[seeding::TAG_DROPOUT, step as u64]),
        )
        .unwrap();
        let diag = out.looksam.expect("looksam diagnostics");
        if diag.refreshed {
            refreshes += 1;
            let tol = 1e-9 * diag.norm_gv.max(1e-300) * diag.norm_g.max(1e-300);
            assert!(
                diag.dot_gv_g.abs() <= tol.max(1e-18),
                "step {step}: <g_v, g> = {} exceeds {tol}",
                diag.dot_gv_g
            );
        }
    }
    assert_eq!(refreshes, 10);
}

#[test]
fn step_cost_per_variant() {
    let config = toy_config();
    let run_one = |spec: &VariantSpec| {
        let mut model = MlpModel::new(config.clone(), 3).unwrap();
        let mut state = OptimizerState::new(model.k(), 3);
        let (x, y) = fixed_batch(&config, 16, 3);
        sam_outer_step(
            spec,
            &mut state,
            &mut model,
            TrainBatch { x: &x, y: &y },
            LR,
            WD,
            7,
        )
        .unwrap()
        .cost
    };

    let adam = run_one(&VariantSpec::new(VariantKind::Adam, 0.0));
    assert_eq!(adam.gradient_evals, 1);
    assert_eq!(adam.datapoints_used, 16);

    let sam = run_one(&VariantSpec::new(VariantKind::Sam, 0.05));
    assert_eq!(sam.gradient_evals, 2);
    assert_eq!(sam.datapoints_used, 16);
    assert_eq!(sam.layers_perturbed, 1.0);

    let mut ksam = VariantSpec::new(VariantKind::KSam, 0.05);
    ksam.k = Some(4);
    let kc = run_one(&ksam);
    assert_eq!(kc.gradient_evals, 2);
    assert_eq!(kc.datapoints_used, 4);

    let mut esam = VariantSpec::new(VariantKind::Esam, 0.05);
    esam.gamma = Some(0.5);
    esam.xi = Some(0.5);
    let ec = run_one(&esam);
    assert_eq!(ec.gradient_evals, 2);
    assert_eq!(ec.datapoints_used, 8); // ceil(0.5 * 16)
}

#[test]
fn looksam_average_evals_match_period() {
    // L=5 over 10 steps: refresh steps cost 2, reuse steps cost 1
    let config = toy_config();
    let mut spec = VariantSpec::new(VariantKind::LookSam, 0.05);
    spec.period = Some(5);
    spec.alpha = Some(0.5);
    let mut model = MlpModel::new(config.clone(), 5).unwrap();
    let mut state = OptimizerState::new(model.k(), 5);
    let (x, y) = fixed_batch(&config, 16, 11);
    let mut evals = 0u64;
    for step in 0..10 {
        let out = sam_outer_step(
            &spec,
            &mut state,
            &mut model,
            TrainBatch { x: &x, y: &y },
            LR,
            WD,
            step,
        )
        .unwrap();
        evals += out.cost.gradient_evals as u64;
    }
    // 2 refreshes (steps 0 and 5) at 2 evals + 8 reuse steps at 1 eval
    assert_eq!(evals, 12);
    // average 1.2 evals per step
    assert!((evals as f64 / 10.0 - 1.2).abs() < 1e-12);
}

#[test]
fn nosam_without_norm_layers_degrades_to_adam_update_with_event() {
    let config = MlpConfig {
        widths: vec![2, 8, 2],
        use_batchnorm: false,
        dropout_rate: 0.0,
    };
    let spec = VariantSpec::new(VariantKind::NoSam, 0.05);
    let mut model = MlpModel::new(config.clone(), 21).unwrap();
    let mut adam_model = model.clone();
    let mut state = OptimizerState::new(model.k(), 0);
    let mut adam_state = OptimizerState::new(model.k(), 0);
    let (x, y) = fixed_batch(&config, 8, 21);
    let out = sam_outer_step(
        &spec,
        &mut state,
        &mut model,
        TrainBatch { x: &x, y: &y },
        LR,
        WD,
        3,
    )
    .unwrap();
    assert_eq!(state.events.no_norm_layers, 1);
    assert_eq!(out.cost.layers_perturbed, 0.0);
    // the resulting update equals a plain Adam update on the same batch
    sam_outer_step(
        &VariantSpec::new(VariantKind::Adam, 0.0),
        &mut adam_state,
        &mut adam_model,
        TrainBatch { x: &x, y: &y },
        LR,
        WD,
        3,
    )
    .unwrap();
    assert_eq!(
        model.param_view().values(),
        adam_model.param_view().values()
    );
}
