mod common;

use common::*;
use qecs::encoder::ModelKind;
use qecs::rl::{CriticConfig, CriticModel};

#[test]
fn bag_encoder_ranking_loss_gradient() {
    let err = encoder_gradient_error(ModelKind::BagAttention);
    assert!(err < 1e-4, "relative error {err:e}");
}

#[test]
fn recurrent_encoder_ranking_loss_gradient() {
    let err = encoder_gradient_error(ModelKind::Recurrent);
    assert!(err < 1e-4, "relative error {err:e}");
}

#[test]
fn seq2seq_teacher_forcing_gradient() {
    let err = seq2seq_gradient_error();
    assert!(err < 1e-4, "relative error {err:e}");
}

#[test]
fn critic_squared_error_gradient() {
    let critic = CriticModel::new(CriticConfig {
        state_dim: 5,
        hidden: 6,
        init_scale: 0.5,
        seed: 9,
    })
    .unwrap();
    let states: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..5).map(|j| ((i * 5 + j) as f64 * 0.37).sin()).collect())
        .collect();
    let returns = vec![0.25; 4];
    let (_, grads) = critic.loss_gradients(&states, &returns).unwrap();
    let err = max_relative_fd_error(&critic.params, &grads, |p| {
        let mut c = critic.clone();
        c.params = p.clone();
        c.loss_gradients(&states, &returns).unwrap().0
    });
    assert!(err < 1e-4, "relative error {err:e}");
}
