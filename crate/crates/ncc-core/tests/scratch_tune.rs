//! Temporary calibration harness; deleted before shipping.

use ncc_core::analysis::{fo_ne_residual, phi_grad_norm, GradMode};
use ncc_core::buffer::LevelBuffer;
use ncc_core::env::{make_matrix_level, SpaceConfig};
use ncc_core::scoring::ScoreKind;
use ncc_core::trainer::{train_with_buffer, Mode, TrainConfig};

#[test]
#[ignore]
fn tune_matrix_convergence() {
    let levels = vec![
        make_matrix_level(vec![1.0, 0.0]).unwrap(),
        make_matrix_level(vec![0.0, 1.0]).unwrap(),
        make_matrix_level(vec![0.8, 0.2]).unwrap(),
        make_matrix_level(vec![0.3, 0.7]).unwrap(),
    ];
    let space = SpaceConfig::Matrix {
        actions: 2,
        payoff_low: 0.0,
        payoff_high: 1.0,
    };
    for (eta_x, eta_y, m, iters) in [
        (0.1, 1.0, 16, 2000usize),
        (0.2, 2.0, 16, 2000),
        (0.1, 1.0, 64, 3000),
        (0.05, 0.5, 64, 3000),
    ] {
        let config = TrainConfig {
            mode: Mode::Theory,
            score: ScoreKind::Regret,
            eta_x,
            eta_y,
            alpha: 0.05,
            xi: 1e-6,
            zeta_prime: 0.05,
            gamma: 0.995,
            m_per_level: m,
            batch_levels: 4,
            buffer_size: 4,
            new_levels: 0,
            epochs: 1,
            iterations: iters,
            eval_cadence: 50,
            seed: 11,
            ..TrainConfig::default()
        };
        let buffer = LevelBuffer::from_levels(levels.clone()).unwrap();
        let t0 = std::time::Instant::now();
        let state = train_with_buffer(&config, &space, buffer).unwrap();
        let best = state.best.as_ref().unwrap();
        let phi = phi_grad_norm(
            &best.params,
            &state.buffer,
            ScoreKind::Regret,
            0.995,
            0.05,
            1e-6,
            1e-10,
            GradMode::Exact,
        )
        .unwrap();
        let res = fo_ne_residual(
            &best.params,
            &phi.y_star,
            &state.buffer,
            ScoreKind::Regret,
            0.995,
            0.05,
            1e-6,
            GradMode::Exact,
        )
        .unwrap();
        println!(
            "eta_x={eta_x} eta_y={eta_y} M={m} iters={iters}: best phi={:.5} at iter {}, re-eval phi={:.5}, fo=({:.5},{:.6}), {:?}",
            best.measure,
            best.iteration,
            phi.norm,
            res.grad_x_norm,
            res.ascent_gap,
            t0.elapsed()
        );
    }
}
