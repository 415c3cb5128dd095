//! Held-out evaluation and worst-case robustness curves.
//!
//! Per-level statistics come from a fixed number of episodes whose rng is
//! derived from the level id, so results do not depend on candidate order.
//! The robustness curve ranks solvable levels by the evaluated policy's own
//! mean return and reports, for each alpha, the mean return over the worst
//! alpha percent.

use crate::env::{is_solvable, rollout, ActionPolicy, LevelSpec};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use rayon::prelude::*;
use std::collections::HashSet;

#[derive(Debug, Clone)]
pub struct LevelEval {
    pub level_id: u64,
    pub mean_return: f64,
    pub solve_rate: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Ordered by level id.
    pub per_level: Vec<LevelEval>,
    pub mean_return: f64,
    pub mean_solve_rate: f64,
    pub episodes_per_level: usize,
    /// Set when an evaluated level id also appears in the training set.
    pub overlap_warning: bool,
}

fn eval_level<P: ActionPolicy + Sync + ?Sized>(
    policy: &P,
    level: &LevelSpec,
    episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<LevelEval> {
    let mut total_return = 0.0;
    let mut solved = 0usize;
    for episode in 0..episodes {
        let mut rng = stream_rng(seed, Stream::Eval, &[level.id, episode as u64]);
        let traj = rollout(policy, level, gamma, &mut rng)?;
        total_return += crate::env::discounted_return(&traj, gamma);
        if traj.solved() {
            solved += 1;
        }
    }
    Ok(LevelEval {
        level_id: level.id,
        mean_return: total_return / episodes as f64,
        solve_rate: solved as f64 / episodes as f64,
    })
}

/// Evaluates the policy on a held-out level set.
///
/// Passing the training ids lets the report flag accidental overlap; overlap
/// is a warning, not a failure.
pub fn evaluate<P: ActionPolicy + Sync + ?Sized>(
    policy: &P,
    eval_levels: &[LevelSpec],
    episodes_per_level: usize,
    gamma: f64,
    seed: u64,
    train_ids: Option<&HashSet<u64>>,
) -> Result<EvalReport> {
    if eval_levels.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".to_string()));
    }
    if episodes_per_level == 0 {
        return Err(Error::InvalidArgument("episodes_per_level must be >= 1".to_string()));
    }
    let mut per_level: Vec<LevelEval> = eval_levels
        .par_iter()
        .map(|level| eval_level(policy, level, episodes_per_level, gamma, seed))
        .collect::<Result<_>>()?;
    per_level.sort_by_key(|e| e.level_id);
    let mean_return = per_level.iter().map(|e| e.mean_return).sum::<f64>() / per_level.len() as f64;
    let mean_solve_rate =
        per_level.iter().map(|e| e.solve_rate).sum::<f64>() / per_level.len() as f64;
    let overlap_warning = train_ids.is_some_and(|ids| {
        eval_levels.iter().any(|l| ids.contains(&l.id))
    });
    Ok(EvalReport {
        per_level,
        mean_return,
        mean_solve_rate,
        episodes_per_level,
        overlap_warning,
    })
}

/// What the worst-case ranking sorts on. The curve's value is always the
/// mean return of the bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvarRankBy {
    Return,
    SolveRate,
}

#[derive(Debug, Clone)]
pub struct CvarCurve {
    /// `(alpha_percent, mean return over the worst ceil(alpha%) solvable levels)`.
    pub points: Vec<(f64, f64)>,
    pub solvable_count: usize,
}

/// The worst-case robustness curve over solvable candidates.
///
/// Unsolvable levels are filtered out first; the rest are ranked ascending
/// by the policy's own per-level statistic (ties by id) and `CVaR(alpha)` is
/// the mean return over the worst `ceil(alpha% * n)` of them. `CVaR(100)`
/// equals the aggregate mean by construction.
pub fn cvar_eval<P: ActionPolicy + Sync + ?Sized>(
    policy: &P,
    candidates: &[LevelSpec],
    alpha_grid: &[f64],
    episodes_per_level: usize,
    gamma: f64,
    seed: u64,
    rank_by: CvarRankBy,
) -> Result<CvarCurve> {
    if alpha_grid.is_empty() {
        return Err(Error::InvalidArgument("empty alpha grid".to_string()));
    }
    for &alpha in alpha_grid {
        if !(alpha > 0.0 && alpha <= 100.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 100], got {alpha}"
            )));
        }
    }
    let solvable: Vec<&LevelSpec> = candidates.iter().filter(|l| is_solvable(l)).collect();
    if solvable.is_empty() {
        return Err(Error::InvalidArgument(
            "no solvable candidate levels".to_string(),
        ));
    }
    let mut stats: Vec<LevelEval> = solvable
        .par_iter()
        .map(|level| eval_level(policy, level, episodes_per_level, gamma, seed))
        .collect::<Result<_>>()?;
    stats.sort_by(|a, b| {
        let ka = match rank_by {
            CvarRankBy::Return => a.mean_return,
            CvarRankBy::SolveRate => a.solve_rate,
        };
        let kb = match rank_by {
            CvarRankBy::Return => b.mean_return,
            CvarRankBy::SolveRate => b.solve_rate,
        };
        ka.partial_cmp(&kb)
            .unwrap()
            .then_with(|| a.level_id.cmp(&b.level_id))
    });
    let n = stats.len();
    let points = alpha_grid
        .iter()
        .map(|&alpha| {
            let k = ((alpha / 100.0 * n as f64).ceil() as usize).clamp(1, n);
            let value = stats[..k].iter().map(|e| e.mean_return).sum::<f64>() / k as f64;
            (alpha, value)
        })
        .collect();
    Ok(CvarCurve {
        points,
        solvable_count: n,
    })
}

pub const EVAL_CSV_HEADER: &[&str] = &["method", "seed", "level_id", "mean_return", "solve_rate"];
pub const CVAR_CSV_HEADER: &[&str] = &["method", "seed", "alpha", "cvar"];

pub fn eval_csv_rows(report: &EvalReport, method: &str, seed: u64) -> Vec<Vec<crate::csvio::Cell>> {
    use crate::csvio::Cell;
    report
        .per_level
        .iter()
        .map(|e| {
            vec![
                Cell::Text(method.to_string()),
                Cell::Int(seed),
                Cell::Int(e.level_id),
                Cell::Float(e.mean_return),
                Cell::Float(e.solve_rate),
            ]
        })
        .collect()
}

pub fn cvar_csv_rows(curve: &CvarCurve, method: &str, seed: u64) -> Vec<Vec<crate::csvio::Cell>> {
    use crate::csvio::Cell;
    curve
        .points
        .iter()
        .map(|(alpha, value)| {
            vec![
                Cell::Text(method.to_string()),
                Cell::Int(seed),
                Cell::Float(*alpha),
                Cell::Float(*value),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_grid_level, make_matrix_level, Observation, SpaceConfig};
    use crate::policy::PolicyParams;

    struct AlwaysRight;
    impl ActionPolicy for AlwaysRight {
        fn action_probs(&self, _: &Observation, n: usize) -> Vec<f64> {
            let mut p = vec![0.0; n];
            p[3] = 1.0;
            p
        }
    }

    fn corridor(goal_x: usize) -> LevelSpec {
        make_grid_level(4, 2, vec![false; 8], (0, 0), (goal_x, 0)).unwrap()
    }

    #[test]
    fn optimal_policy_has_full_solve_rate() {
        let levels = vec![corridor(1), corridor(2), corridor(3)];
        let report = evaluate(&AlwaysRight, &levels, 4, 0.9, 1, None).unwrap();
        assert_eq!(report.mean_solve_rate, 1.0);
        for e in &report.per_level {
            assert_eq!(e.solve_rate, 1.0);
        }
    }

    #[test]
    fn unsolvable_set_has_zero_solve_rate() {
        let mut walls = vec![false; 9];
        walls[5] = true;
        walls[7] = true;
        let blocked = make_grid_level(3, 3, walls, (0, 0), (2, 2)).unwrap();
        let policy = PolicyParams::new(4, 1.0, 10.0).unwrap();
        let report = evaluate(&policy, &[blocked], 16, 0.9, 2, None).unwrap();
        assert_eq!(report.mean_solve_rate, 0.0);
    }

    #[test]
    fn overlap_sets_warning_only() {
        let levels = vec![corridor(1), corridor(2)];
        let mut train_ids = HashSet::new();
        train_ids.insert(levels[0].id);
        let report = evaluate(&AlwaysRight, &levels, 2, 0.9, 3, Some(&train_ids)).unwrap();
        assert!(report.overlap_warning);
        let disjoint = HashSet::new();
        let report = evaluate(&AlwaysRight, &levels, 2, 0.9, 3, Some(&disjoint)).unwrap();
        assert!(!report.overlap_warning);
    }

    #[test]
    fn cvar_known_values() {
        // deterministic returns 0, 0.5, 1, 1 over four always-solvable levels
        let levels = vec![
            make_matrix_level(vec![0.0, 0.0]).unwrap(),
            make_matrix_level(vec![0.5, 0.5]).unwrap(),
            make_matrix_level(vec![1.0, 1.0]).unwrap(),
            make_matrix_level(vec![1.0, 1.0 + 1e-12]).unwrap(),
        ];
        let policy = PolicyParams::new(2, 1.0, 10.0).unwrap();
        let curve = cvar_eval(
            &policy,
            &levels,
            &[50.0, 100.0],
            8,
            1.0,
            4,
            CvarRankBy::Return,
        )
        .unwrap();
        assert!((curve.points[0].1 - 0.25).abs() < 1e-9);
        let aggregate = curve.points[1].1;
        assert!((aggregate - (0.0 + 0.5 + 1.0 + 1.0) / 4.0).abs() < 1e-9);
    }

    #[test]
    fn cvar_is_monotone_in_alpha() {
        let levels: Vec<LevelSpec> = (0..10)
            .map(|i| make_matrix_level(vec![i as f64 / 10.0, i as f64 / 10.0]).unwrap())
            .collect();
        let policy = PolicyParams::new(2, 1.0, 10.0).unwrap();
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 * 10.0).collect();
        let curve = cvar_eval(&policy, &levels, &grid, 4, 1.0, 5, CvarRankBy::Return).unwrap();
        for pair in curve.points.windows(2) {
            assert!(pair[1].1 >= pair[0].1 - 1e-12);
        }
    }

    #[test]
    fn unsolvable_candidates_are_filtered() {
        let mut walls = vec![false; 9];
        walls[5] = true;
        walls[7] = true;
        let blocked = make_grid_level(3, 3, walls.clone(), (0, 0), (2, 2)).unwrap();
        let open = make_grid_level(3, 3, vec![false; 9], (0, 0), (2, 2)).unwrap();
        let candidates = vec![blocked.clone(), open.clone()];
        let policy = PolicyParams::new(4, 1.0, 10.0).unwrap();
        let curve =
            cvar_eval(&policy, &candidates, &[100.0], 4, 0.9, 6, CvarRankBy::Return).unwrap();
        // brute-force filter: exactly the BFS-solvable levels survive
        let expected = candidates.iter().filter(|l| is_solvable(l)).count();
        assert_eq!(curve.solvable_count, expected);
        assert_eq!(curve.solvable_count, 1);

        let all_blocked = vec![blocked];
        assert!(cvar_eval(&policy, &all_blocked, &[100.0], 4, 0.9, 6, CvarRankBy::Return).is_err());
    }

    #[test]
    fn candidate_order_does_not_change_the_curve() {
        let space = SpaceConfig::Grid {
            width: 3,
            height: 3,
            wall_prob: 0.3,
            horizon: None,
        };
        let mut rng = stream_rng(7, Stream::Levels, &[0]);
        let mut candidates: Vec<LevelSpec> = (0..12)
            .map(|_| crate::env::sample_level_uniform(&space, &mut rng).unwrap())
            .collect();
        let policy = PolicyParams::new(4, 0.5, 10.0).unwrap();
        let grid = [10.0, 50.0, 100.0];
        let a = cvar_eval(&policy, &candidates, &grid, 6, 0.9, 8, CvarRankBy::Return).unwrap();
        candidates.reverse();
        let b = cvar_eval(&policy, &candidates, &grid, 6, 0.9, 8, CvarRankBy::Return).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa.1, pb.1);
        }
    }

    #[test]
    fn alpha_grid_validation() {
        let levels = vec![make_matrix_level(vec![1.0, 0.0]).unwrap()];
        let policy = PolicyParams::new(2, 1.0, 10.0).unwrap();
        assert!(cvar_eval(&policy, &levels, &[0.0], 2, 1.0, 9, CvarRankBy::Return).is_err());
        assert!(cvar_eval(&policy, &levels, &[101.0], 2, 1.0, 9, CvarRankBy::Return).is_err());
        assert!(cvar_eval(&policy, &levels, &[], 2, 1.0, 9, CvarRankBy::Return).is_err());
    }
}
