//! Per-level score functions and the optimal-return oracle.
//!
//! A score measures how much training value a level has for the current
//! policy: negative return (zero-sum with return maximization), oracle
//! regret, learnability (success variance, plus its generalization to graded
//! returns), and positive value loss. The optimal-return oracle is exact
//! value iteration on the deterministic maze, cross-checkable against the
//! BFS distance.

use crate::env::{bfs_distance, GridLevel, LevelPayload, LevelSpec, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    NegReturn,
    Regret,
    Learnability,
    Pvl,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::NegReturn => "neg-return",
            ScoreKind::Regret => "regret",
            ScoreKind::Learnability => "learnability",
            ScoreKind::Pvl => "pvl",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg-return" => Ok(ScoreKind::NegReturn),
            "regret" => Ok(ScoreKind::Regret),
            "learnability" => Ok(ScoreKind::Learnability),
            "pvl" => Ok(ScoreKind::Pvl),
            other => Err(Error::InvalidArgument(format!("unknown score kind '{other}'"))),
        }
    }

    /// Zero-sum with the agent's return-maximization objective.
    pub fn is_zero_sum(self) -> bool {
        matches!(self, ScoreKind::NegReturn | ScoreKind::Regret)
    }
}

/// A score per buffer slot, tagged with how it was produced.
#[derive(Debug, Clone)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    /// Trajectories per slot behind each estimate.
    pub batch_m: usize,
    pub kind: ScoreKind,
    /// Iteration of the policy snapshot that generated the scores.
    pub policy_iter: u64,
}

impl ScoreVector {
    pub fn validate(&self, buffer_len: usize) -> Result<()> {
        if self.values.len() != buffer_len {
            return Err(Error::Mismatch(format!(
                "score vector has {} entries for a buffer of {buffer_len}",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score vector".to_string()));
        }
        Ok(())
    }
}

fn mean_return(trajs: &[Trajectory], gamma: f64) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory batch".to_string()));
    }
    Ok(trajs
        .iter()
        .map(|t| crate::env::discounted_return(t, gamma))
        .sum::<f64>()
        / trajs.len() as f64)
}

/// `-(1/M) sum_j R_j`: the empirical negative mean return.
pub fn score_neg_return(trajs: &[Trajectory], gamma: f64) -> Result<f64> {
    Ok(-mean_return(trajs, gamma)?)
}

fn value_iteration_grid(grid: &GridLevel, gamma: f64, tol: f64) -> Vec<f64> {
    let cells = grid.width * grid.height;
    let idx = |x: usize, y: usize| y * grid.width + x;
    let goal = idx(grid.goal.0, grid.goal.1);
    let mut values = vec![0.0; cells];
    // deterministic shortest-path structure: values become exact after at
    // most `cells` sweeps and the residual then hits zero
    for _ in 0..(4 * cells + 16) {
        let mut next_values = vec![0.0; cells];
        let mut residual = 0.0_f64;
        for y in 0..grid.height {
            for x in 0..grid.width {
                let s = idx(x, y);
                if grid.walls[s] || s == goal {
                    continue;
                }
                let mut best = f64::NEG_INFINITY;
                for (dx, dy) in [(0i64, -1i64), (0, 1), (-1, 0), (1, 0)] {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    let blocked = nx < 0
                        || ny < 0
                        || nx >= grid.width as i64
                        || ny >= grid.height as i64
                        || grid.walls[idx(nx as usize, ny as usize)];
                    let target = if blocked { s } else { idx(nx as usize, ny as usize) };
                    let q = if target == goal {
                        1.0
                    } else {
                        gamma * values[target]
                    };
                    best = best.max(q);
                }
                next_values[s] = best;
                residual = residual.max((best - values[s]).abs());
            }
        }
        values = next_values;
        if residual <= tol {
            break;
        }
    }
    values
}

/// Best achievable discounted return on the level: value iteration to
/// residual 1e-12 for mazes (`gamma^(d-1)` at BFS distance d, or 0 when the
/// goal is unreachable within the horizon), the max payoff for matrix games.
pub fn optimal_return_oracle(level: &LevelSpec, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in (0,1], got {gamma}"
        )));
    }
    match &level.payload {
        LevelPayload::Matrix(m) => Ok(m.payoffs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))),
        LevelPayload::Grid(g) => {
            let Some(distance) = bfs_distance(g) else {
                return Ok(0.0);
            };
            if distance > level.horizon {
                return Ok(0.0);
            }
            let values = value_iteration_grid(g, gamma, 1e-12);
            Ok(values[g.start.1 * g.width + g.start.0])
        }
    }
}

/// Oracle regret: optimal return minus the empirical mean return.
pub fn score_regret(trajs: &[Trajectory], level: &LevelSpec, gamma: f64) -> Result<f64> {
    Ok(optimal_return_oracle(level, gamma)? - mean_return(trajs, gamma)?)
}

/// Sampled-maximum regret: `max_j R_j - (1/M) sum_j R_j`. The estimator-style
/// variant of [`score_regret`], selectable for estimator-variance studies.
pub fn score_regret_sampled(trajs: &[Trajectory], gamma: f64) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory batch".to_string()));
    }
    let returns: Vec<f64> = trajs
        .iter()
        .map(|t| crate::env::discounted_return(t, gamma))
        .collect();
    let max = returns.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(max - mean)
}

/// Success variance `p(1-p)` over binary outcomes; the population-variance
/// form, so it equals the sample's population variance exactly.
pub fn score_learnability_binary(outcomes: &[f64]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("empty outcome vector".to_string()));
    }
    for &o in outcomes {
        if o != 0.0 && o != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "binary learnability needs outcomes in {{0,1}}, got {o}"
            )));
        }
    }
    let p = outcomes.iter().sum::<f64>() / outcomes.len() as f64;
    Ok(p * (1.0 - p))
}

/// Generalized learnability over graded returns.
///
/// Per level: empirical mean `mu_l` and population std `sigma_l` over its M
/// returns. Across the buffer: mean `mu` and population variance `sigma^2`
/// of the level means. The score is `sigma_l * N(mu_l | mu, sigma^2)`, which
/// concentrates mass on levels of intermediate difficulty. When the level
/// means are all equal the Gaussian degenerates and the score falls back to
/// `sigma_l` alone.
pub fn score_learnability_general(per_level_returns: &[Vec<f64>]) -> Result<Vec<f64>> {
    if per_level_returns.is_empty() {
        return Err(Error::InvalidArgument("no levels to score".to_string()));
    }
    let m = per_level_returns[0].len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "generalized learnability needs M >= 2 returns per level, got {m}"
        )));
    }
    if per_level_returns.iter().any(|r| r.len() != m) {
        return Err(Error::Mismatch(
            "levels have differing return counts".to_string(),
        ));
    }
    let n = per_level_returns.len() as f64;
    let mut mu_l = Vec::with_capacity(per_level_returns.len());
    let mut sigma_l = Vec::with_capacity(per_level_returns.len());
    for returns in per_level_returns {
        let mean = returns.iter().sum::<f64>() / m as f64;
        let sq = returns.iter().map(|r| r * r).sum::<f64>() / m as f64;
        mu_l.push(mean);
        sigma_l.push((sq - mean * mean).max(0.0).sqrt());
    }
    let mu = mu_l.iter().sum::<f64>() / n;
    let var = (mu_l.iter().map(|v| v * v).sum::<f64>() / n - mu * mu).max(0.0);
    if var == 0.0 {
        return Ok(sigma_l);
    }
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    Ok(mu_l
        .iter()
        .zip(&sigma_l)
        .map(|(ml, sl)| sl * norm * (-(ml - mu) * (ml - mu) / (2.0 * var)).exp())
        .collect())
}

/// Options for the per-level pooled scoring path.
#[derive(Debug, Clone, Copy)]
pub struct PooledScoreOpts {
    pub gamma: f64,
    pub use_sampled_regret: bool,
    pub gae_lambda: f64,
}

/// Scores one level from its trajectory batch.
///
/// This is the per-level form of each kind: learnability here is the binary
/// success variance (the buffer-wide generalized form needs every level's
/// returns and lives with the trainer); positive value loss uses the batch
/// mean return as its critic stand-in.
pub fn pooled_score(
    kind: ScoreKind,
    trajs: &[Trajectory],
    level: &LevelSpec,
    opts: &PooledScoreOpts,
) -> Result<f64> {
    match kind {
        ScoreKind::NegReturn => score_neg_return(trajs, opts.gamma),
        ScoreKind::Regret => {
            if opts.use_sampled_regret {
                score_regret_sampled(trajs, opts.gamma)
            } else {
                score_regret(trajs, level, opts.gamma)
            }
        }
        ScoreKind::Learnability => {
            let outcomes: Vec<f64> = trajs
                .iter()
                .map(|t| if t.solved() { 1.0 } else { 0.0 })
                .collect();
            score_learnability_binary(&outcomes)
        }
        ScoreKind::Pvl => {
            if trajs.is_empty() {
                return Err(Error::InvalidArgument("empty trajectory batch".to_string()));
            }
            let mean: f64 = trajs
                .iter()
                .map(|t| crate::env::discounted_return(t, opts.gamma))
                .sum::<f64>()
                / trajs.len() as f64;
            let values: Vec<Vec<f64>> = trajs.iter().map(|t| vec![mean; t.len()]).collect();
            score_pvl(trajs, &values, opts.gamma, opts.gae_lambda)
        }
    }
}

/// Positive value loss: mean over steps of `max(GAE advantage, 0)`.
///
/// `value_estimates[j][t]` is the critic stand-in for trajectory j at step t
/// (the next value after the final step is 0). Advantages follow the usual
/// `delta_t = r_t + gamma * V_{t+1} - V_t`, `A_t = delta_t + gamma*lambda*A_{t+1}`.
pub fn score_pvl(
    trajs: &[Trajectory],
    value_estimates: &[Vec<f64>],
    gamma: f64,
    gae_lambda: f64,
) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory batch".to_string()));
    }
    if trajs.len() != value_estimates.len() {
        return Err(Error::Mismatch(format!(
            "{} trajectories but {} value rows",
            trajs.len(),
            value_estimates.len()
        )));
    }
    let mut total = 0.0;
    let mut steps = 0usize;
    for (traj, values) in trajs.iter().zip(value_estimates) {
        if values.len() != traj.len() {
            return Err(Error::Mismatch(format!(
                "trajectory has {} steps but {} value estimates",
                traj.len(),
                values.len()
            )));
        }
        let mut advantage = 0.0;
        let mut advantages = vec![0.0; traj.len()];
        for t in (0..traj.len()).rev() {
            let next_value = if t + 1 < traj.len() { values[t + 1] } else { 0.0 };
            let delta = traj.steps[t].reward + gamma * next_value - values[t];
            advantage = delta + gamma * gae_lambda * advantage;
            advantages[t] = advantage;
        }
        for a in advantages {
            total += a.max(0.0);
            steps += 1;
        }
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("no steps to score".to_string()));
    }
    Ok(total / steps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_grid_level, make_matrix_level, Observation, TrajStep};

    fn traj_from_rewards(rewards: &[f64], gamma: f64) -> Trajectory {
        let steps: Vec<TrajStep> = rewards
            .iter()
            .map(|&r| TrajStep {
                obs: Observation::Matrix,
                action: 0,
                reward: r,
            })
            .collect();
        let mut rtg = vec![0.0; steps.len()];
        let mut acc = 0.0;
        for t in (0..steps.len()).rev() {
            acc = steps[t].reward + gamma * acc;
            rtg[t] = acc;
        }
        Trajectory {
            level_id: 0,
            steps,
            terminal: true,
            gamma,
            return_to_go: rtg,
        }
    }

    #[test]
    fn neg_return_examples() {
        let a = traj_from_rewards(&[1.0], 1.0);
        let b = traj_from_rewards(&[0.0], 1.0);
        assert_eq!(score_neg_return(&[a, b], 1.0).unwrap(), -0.5);
        let z = traj_from_rewards(&[0.0, 0.0], 1.0);
        assert_eq!(score_neg_return(&[z], 1.0).unwrap(), 0.0);
        let c = traj_from_rewards(&[0.0, 0.0, 1.0], 0.9);
        assert!((score_neg_return(&[c], 0.9).unwrap() + 0.81).abs() < 1e-15);
        assert!(score_neg_return(&[], 0.9).is_err());
    }

    #[test]
    fn oracle_on_empty_maze() {
        let level = make_grid_level(3, 3, vec![false; 9], (0, 0), (2, 2)).unwrap();
        let v = optimal_return_oracle(&level, 0.9).unwrap();
        assert!((v - 0.729).abs() < 1e-12);
    }

    #[test]
    fn oracle_on_unsolvable_maze() {
        let mut walls = vec![false; 9];
        walls[5] = true;
        walls[7] = true;
        let level = make_grid_level(3, 3, walls, (0, 0), (2, 2)).unwrap();
        assert_eq!(optimal_return_oracle(&level, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn oracle_respects_horizon() {
        let level = crate::env::make_grid_level_with_horizon(
            3,
            3,
            vec![false; 9],
            (0, 0),
            (2, 2),
            3, // BFS distance is 4
        )
        .unwrap();
        assert_eq!(optimal_return_oracle(&level, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn oracle_on_matrix_game() {
        let level = make_matrix_level(vec![0.2, 0.7]).unwrap();
        assert_eq!(optimal_return_oracle(&level, 0.9).unwrap(), 0.7);
    }

    #[test]
    fn oracle_matches_bfs_distance_on_sampled_masks() {
        for mask in (0..512u16).step_by(3) {
            let walls: Vec<bool> = (0..9).map(|i| mask >> i & 1 == 1).collect();
            if walls[0] || walls[8] {
                continue;
            }
            let level = make_grid_level(3, 3, walls, (0, 0), (2, 2)).unwrap();
            let v = optimal_return_oracle(&level, 0.9).unwrap();
            match bfs_distance(level.grid().unwrap()) {
                Some(d) => assert!((v - 0.9_f64.powi(d as i32 - 1)).abs() < 1e-12),
                None => assert_eq!(v, 0.0),
            }
        }
    }

    #[test]
    fn regret_examples() {
        let level = make_matrix_level(vec![1.0, 0.0]).unwrap();
        let mut t = traj_from_rewards(&[0.3], 1.0);
        t.level_id = level.id;
        assert!((score_regret(&[t], &level, 1.0).unwrap() - 0.7).abs() < 1e-15);

        // optimal play has zero regret
        let mut opt = traj_from_rewards(&[1.0], 1.0);
        opt.level_id = level.id;
        assert_eq!(score_regret(&[opt], &level, 1.0).unwrap(), 0.0);

        // unsolvable level: oracle 0, regret is minus the mean return
        let mut walls = vec![false; 9];
        walls[5] = true;
        walls[7] = true;
        let blocked = make_grid_level(3, 3, walls, (0, 0), (2, 2)).unwrap();
        let z = traj_from_rewards(&[0.0], 0.9);
        assert!(score_regret(&[z], &blocked, 0.9).unwrap() <= 0.0);
    }

    #[test]
    fn sampled_regret_variant() {
        let a = traj_from_rewards(&[1.0], 1.0);
        let b = traj_from_rewards(&[0.0], 1.0);
        assert_eq!(score_regret_sampled(&[a, b], 1.0).unwrap(), 0.5);
    }

    #[test]
    fn binary_learnability_examples() {
        assert_eq!(score_learnability_binary(&[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.25);
        assert_eq!(score_learnability_binary(&[1.0; 6]).unwrap(), 0.0);
        let mut v = vec![0.0; 10];
        v[0] = 1.0;
        assert!((score_learnability_binary(&v).unwrap() - 0.09).abs() < 1e-15);
        assert!(score_learnability_binary(&[0.5]).is_err());
    }

    #[test]
    fn binary_learnability_is_population_variance() {
        for pattern in 0..64u32 {
            let outcomes: Vec<f64> = (0..6).map(|i| ((pattern >> i) & 1) as f64).collect();
            let mean = outcomes.iter().sum::<f64>() / 6.0;
            let var = outcomes.iter().map(|o| (o - mean) * (o - mean)).sum::<f64>() / 6.0;
            let score = score_learnability_binary(&outcomes).unwrap();
            assert!((score - var).abs() < 1e-15);
        }
    }

    #[test]
    fn general_learnability_prefers_intermediate_levels() {
        // level means 0, 0.5, 1 with equal spread: the middle level wins
        let mk = |mu: f64| vec![mu - 0.2, mu + 0.2];
        let scores = score_learnability_general(&[mk(0.0), mk(0.5), mk(1.0)]).unwrap();
        assert!(scores[1] > scores[0]);
        assert!(scores[1] > scores[2]);
        // direct evaluation of the formula for the middle level
        let mu = 0.5;
        let var = (0.0f64.powi(2) + 0.5f64.powi(2) + 1.0) / 3.0 - mu * mu;
        let expected_mid = 0.2 / (2.0 * std::f64::consts::PI * var).sqrt();
        assert!((scores[1] - expected_mid).abs() < 1e-12);
    }

    #[test]
    fn general_learnability_zero_spread_scores_zero() {
        let scores =
            score_learnability_general(&[vec![0.4, 0.4], vec![0.1, 0.9], vec![0.9, 0.9]]).unwrap();
        assert_eq!(scores[0], 0.0);
        assert!(scores[1] > 0.0);
        assert_eq!(scores[2], 0.0);
    }

    #[test]
    fn general_learnability_degenerate_gaussian_falls_back() {
        // all level means equal: score falls back to the level stds
        let scores =
            score_learnability_general(&[vec![0.3, 0.7], vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!((scores[0] - 0.2).abs() < 1e-12);
        assert_eq!(scores[1], 0.0);
        assert!((scores[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn general_learnability_permutation_invariant() {
        let a = vec![vec![0.1, 0.3], vec![0.6, 0.8], vec![0.2, 0.9]];
        let scores = score_learnability_general(&a).unwrap();
        let permuted = vec![a[2].clone(), a[0].clone(), a[1].clone()];
        let scores_p = score_learnability_general(&permuted).unwrap();
        assert!((scores[2] - scores_p[0]).abs() < 1e-15);
        assert!((scores[0] - scores_p[1]).abs() < 1e-15);
        // permuting returns within a level changes nothing
        let swapped = vec![vec![0.3, 0.1], a[1].clone(), a[2].clone()];
        let scores_s = score_learnability_general(&swapped).unwrap();
        assert!((scores[0] - scores_s[0]).abs() < 1e-15);
    }

    #[test]
    fn general_learnability_monotone_in_spread() {
        // raising one level's spread while holding its mean cannot lower its score
        let base = vec![vec![0.4, 0.6], vec![0.0, 0.2], vec![0.8, 1.0]];
        let wide = vec![vec![0.3, 0.7], vec![0.0, 0.2], vec![0.8, 1.0]];
        let s_base = score_learnability_general(&base).unwrap();
        let s_wide = score_learnability_general(&wide).unwrap();
        assert!(s_wide[0] >= s_base[0]);
    }

    #[test]
    fn general_learnability_shape_checks() {
        assert!(score_learnability_general(&[]).is_err());
        assert!(score_learnability_general(&[vec![0.5]]).is_err());
        assert!(score_learnability_general(&[vec![0.5, 0.5], vec![0.1]]).is_err());
    }

    #[test]
    fn pvl_examples() {
        let gamma = 0.9;
        let traj = traj_from_rewards(&[0.0, 0.0, 1.0], gamma);
        // critic equal to the return-to-go: zero advantage everywhere
        let values = vec![traj.return_to_go.clone()];
        assert_eq!(score_pvl(&[traj.clone()], &values, gamma, 0.95).unwrap(), 0.0);

        // all-negative advantages clip to zero
        let high: Vec<f64> = traj.return_to_go.iter().map(|v| v + 1.0).collect();
        assert_eq!(score_pvl(&[traj.clone()], &[high], gamma, 0.95).unwrap(), 0.0);

        // single step with advantage 0.4
        let one = traj_from_rewards(&[0.5], gamma);
        assert!((score_pvl(&[one], &[vec![0.1]], gamma, 0.95).unwrap() - 0.4).abs() < 1e-15);

        // misaligned lengths
        let t = traj_from_rewards(&[0.0, 1.0], gamma);
        assert!(score_pvl(&[t], &[vec![0.0]], gamma, 0.95).is_err());
    }

    #[test]
    fn regret_and_neg_return_share_policy_gradients() {
        // the two zero-sum scores differ by a constant in x, so their
        // finite-difference gradients through the exact expectation agree
        use crate::policy::{exact_expected_return, PolicyParams};
        let level = make_matrix_level(vec![0.9, 0.1]).unwrap();
        let optimal = optimal_return_oracle(&level, 1.0).unwrap();
        let mut params = PolicyParams::new(2, 0.05, 10.0).unwrap();
        params.table.set_row(Observation::Matrix.key(), vec![0.3, -0.2]);
        let key = Observation::Matrix.key();
        for coord in 0..2 {
            let h = 1e-6;
            let eval = |delta: f64| {
                let mut p = params.clone();
                *p.table.entry_mut(key, coord) += delta;
                exact_expected_return(&p, &level, 1.0).unwrap()
            };
            let d_neg = (-eval(h) + eval(-h)) / (2.0 * h);
            let d_reg = ((optimal - eval(h)) - (optimal - eval(-h))) / (2.0 * h);
            assert!((d_neg - d_reg).abs() < 1e-10);
        }
    }
}
