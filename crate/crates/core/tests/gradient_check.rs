//! Analytic gradients against the central finite-difference oracle.

mod common;

use common::{finite_difference, fixed_batch, loss_at, rel_err};
use samgda::nn::{LossFlavor, MlpConfig, MlpModel, Mode};

fn check_instance(config: MlpConfig, seed: u64, batch: usize, lambda: f64, mode: Mode) -> f64 {
    let mut model = MlpModel::new(config.clone(), seed).unwrap();
    // jitter all parameters (biases init to zero) so no ReLU preactivation
    // sits exactly on the kink, where central differences and the fixed
    // subgradient convention legitimately disagree
    let jittered: Vec<f64> = model
        .param_view()
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| v + 0.017 * ((seed as f64 + i as f64 * 0.7).sin()))
        .collect();
    model.set_params(&jittered).unwrap();
    let (x, y) = fixed_batch(&config, batch, seed);
    let analytic = model
        .loss_and_grad(&x, &y, lambda, LossFlavor::Raw, mode)
        .unwrap()
        .grad;
    let theta = model.param_view().values().to_vec();
    let mut f = |t: &[f64]| loss_at(&model, t, &x, &y, lambda, mode);
    let fd = finite_difference(&mut f, &theta, 1e-5);
    analytic
        .iter()
        .zip(&fd)
        .map(|(a, b)| rel_err(*a, *b))
        .fold(0.0, f64::max)
}

#[test]
fn two_layer_mlp_with_five_params_matches_finite_differences() {
    let config = MlpConfig {
        widths: vec![2, 1, 1],
        use_batchnorm: false,
        dropout_rate: 0.0,
    };
    assert_eq!(config.param_count(), 5);
    let worst = check_instance(config, 7, 3, 0.0, Mode::Eval);
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn hundred_random_instances_match_finite_differences() {
    let shapes: [&[usize]; 5] = [
        &[2, 4, 2],
        &[3, 8, 3],
        &[4, 6, 4, 2],
        &[2, 10, 5, 2],
        &[5, 5, 5],
    ];
    let mut worst_overall: f64 = 0.0;
    for i in 0..100u64 {
        let widths = shapes[(i % 5) as usize].to_vec();
        let use_bn = i % 4 == 1;
        let dropout = if i % 4 == 2 { 0.3 } else { 0.0 };
        let config = MlpConfig {
            widths,
            use_batchnorm: use_bn,
            dropout_rate: dropout,
        };
        assert!(config.param_count() <= 200);
        let lambda = if i % 3 == 0 { 0.1 } else { 0.0 };
        let mode = if use_bn || dropout > 0.0 {
            Mode::Train { dropout_seed: 1000 + i }
        } else {
            Mode::Eval
        };
        let worst = check_instance(config, 100 + i, 6, lambda, mode);
        assert!(worst <= 1e-4, "instance {i}: max relative error {worst}");
        worst_overall = worst_overall.max(worst);
    }
    println!("worst relative error over 100 instances: {worst_overall:.3e}");
}
