//! Temporary calibration harness for the maze experiment; deleted before shipping.

use ncc_core::baselines::run_dr;
use ncc_core::env::SpaceConfig;
use ncc_core::evaluation::{cvar_eval, evaluate, CvarRankBy};
use ncc_core::experiment::sample_eval_levels;
use ncc_core::scoring::ScoreKind;
use ncc_core::stats::paired_one_sided_t;
use ncc_core::trainer::{train, Mode, TrainConfig};
use rayon::prelude::*;

fn space() -> SpaceConfig {
    SpaceConfig::Grid {
        width: 5,
        height: 5,
        wall_prob: 0.35,
        horizon: None,
    }
}

struct Knobs {
    eta_x: f64,
    eta_y: f64,
    alpha: f64,
    zeta_prime: f64,
    buffer: usize,
    fresh: usize,
    m: usize,
    loo: bool,
    sampled: bool,
}

fn config(seed: u64, iters: usize, k: &Knobs) -> TrainConfig {
    TrainConfig {
        mode: Mode::Practical,
        score: ScoreKind::Regret,
        eta_x: k.eta_x,
        eta_y: k.eta_y,
        alpha: k.alpha,
        xi: 1e-6,
        zeta_prime: k.zeta_prime,
        gamma: 0.995,
        m_per_level: k.m,
        batch_levels: 8,
        buffer_size: k.buffer,
        new_levels: k.fresh,
        epochs: 1,
        iterations: iters,
        eval_cadence: 1000,
        phi_mc_batch: 4,
        baseline: if k.loo {
            ncc_core::policy::Baseline::LeaveOneOutAdvantage
        } else {
            ncc_core::policy::Baseline::ReturnToGo
        },
        use_sampled_regret: k.sampled,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
#[ignore]
fn tune_maze_experiment() {
    let iters = 2000;
    for k in [
        Knobs { eta_x: 0.5, eta_y: 1.0, alpha: 0.05, zeta_prime: 0.1, buffer: 32, fresh: 4, m: 8, loo: true, sampled: false },
        Knobs { eta_x: 0.5, eta_y: 1.0, alpha: 0.05, zeta_prime: 0.05, buffer: 32, fresh: 4, m: 8, loo: true, sampled: false },
        Knobs { eta_x: 0.7, eta_y: 0.5, alpha: 0.1, zeta_prime: 0.1, buffer: 64, fresh: 8, m: 8, loo: true, sampled: false },
        Knobs { eta_x: 0.5, eta_y: 1.0, alpha: 0.05, zeta_prime: 0.1, buffer: 32, fresh: 4, m: 8, loo: true, sampled: true },
    ] {
        let t0 = std::time::Instant::now();
        let results: Vec<(f64, f64, f64, f64, f64, f64)> = (1..=10u64)
            .into_par_iter()
            .map(|seed| {
                let ncc = train(&config(seed, iters, &k), &space()).unwrap();
                let dr = run_dr(&config(seed, iters, &k), &space()).unwrap();
                let eval_levels = sample_eval_levels(&space(), 64, seed, 1).unwrap();
                let ncc_eval = evaluate(&ncc.policy, &eval_levels, 8, 0.995, seed, None).unwrap();
                let dr_eval = evaluate(&dr.policy, &eval_levels, 8, 0.995, seed, None).unwrap();
                let candidates = sample_eval_levels(&space(), 200, seed, 2).unwrap();
                let ncc_cvar = cvar_eval(
                    &ncc.policy, &candidates, &[10.0], 8, 0.995, seed, CvarRankBy::Return,
                )
                .unwrap();
                let dr_cvar = cvar_eval(
                    &dr.policy, &candidates, &[10.0], 8, 0.995, seed, CvarRankBy::Return,
                )
                .unwrap();
                let ncc_train_final = ncc.log.last().unwrap().mean_return;
                (
                    ncc_eval.mean_solve_rate,
                    dr_eval.mean_solve_rate,
                    ncc_cvar.points[0].1,
                    dr_cvar.points[0].1,
                    ncc_train_final,
                    dr.log.last().unwrap().mean_return,
                )
            })
            .collect();
        let diffs: Vec<f64> = results.iter().map(|r| r.0 - r.1).collect();
        let (t, p) = paired_one_sided_t(&diffs).unwrap();
        let cvar_wins = results.iter().filter(|r| r.2 >= r.3).count();
        let mean_ncc: f64 = results.iter().map(|r| r.0).sum::<f64>() / 10.0;
        let mean_dr: f64 = results.iter().map(|r| r.1).sum::<f64>() / 10.0;
        let tr_ncc: f64 = results.iter().map(|r| r.4).sum::<f64>() / 10.0;
        let tr_dr: f64 = results.iter().map(|r| r.5).sum::<f64>() / 10.0;
        println!(
            "a={} ey={} z={} buf={}/{} m={} loo={} smp={}: ncc={mean_ncc:.4} dr={mean_dr:.4} t={t:.3} p={p:.4} cvar={cvar_wins}/10 tr=({tr_ncc:.3},{tr_dr:.3}) {:?}",
            k.alpha, k.eta_y, k.zeta_prime, k.buffer, k.fresh, k.m, k.loo, k.sampled, t0.elapsed()
        );
    }
}
