//! The training loops.
//!
//! Theory mode runs the static-buffer loop: each iteration samples levels
//! from the adversary, takes one clipped SGD step on the sampled policy
//! gradient, rescoring the whole buffer for the adversary's projected ascent
//! step. Practical mode adds the dynamic buffer (fresh levels compete with
//! incumbents before the ascent step) and hands the policy update to a
//! pluggable learner that may run several passes.
//!
//! Step sizes are separated: the adversary moves much faster than the
//! policy. Best-iterate tracking records the policy with the smallest
//! stationarity measure seen at the evaluation cadence.

use crate::adversary::{adversary_gradient, ascent_step_y, AdversaryDist};
use crate::analysis::{phi_grad_norm, GradMode};
use crate::buffer::{dynamic_update, init_buffer, LevelBuffer};
use crate::env::{rollout, sample_index, LevelKind, LevelSpec, SpaceConfig, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{reinforce_gradient, sgd_step_x, Baseline, PolicyParams};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::scoring::{score_learnability_general, ScoreKind};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Static buffer, zero-sum score, single SGD step per iteration.
    Theory,
    /// Dynamic buffer, any score, learner with configurable passes.
    Practical,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Theory => "theory",
            Mode::Practical => "practical",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(Mode::Theory),
            "practical" => Ok(Mode::Practical),
            other => Err(Error::InvalidArgument(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub score: ScoreKind,
    pub eta_x: f64,
    pub eta_y: f64,
    pub alpha: f64,
    pub xi: f64,
    pub zeta_prime: f64,
    pub gamma: f64,
    pub weight_bound: f64,
    /// Trajectories per sampled level and per scored slot (M).
    pub m_per_level: usize,
    /// Levels sampled per iteration for the policy update.
    pub batch_levels: usize,
    /// Buffer capacity N.
    pub buffer_size: usize,
    /// Fresh levels per iteration competing for buffer slots (practical).
    pub new_levels: usize,
    /// Learner passes over the iteration's batch (practical; theory pins 1).
    pub epochs: usize,
    pub iterations: usize,
    /// Stationarity is measured and the best iterate updated every this many
    /// iterations (and at the final one).
    pub eval_cadence: usize,
    /// Decay the entropy temperature as `alpha / cbrt(t+1)`.
    pub anneal_alpha: bool,
    pub baseline: Baseline,
    /// Reuse the policy-update rollouts for the sampled slots' score entries
    /// (correlates the two estimators; off by default).
    pub shared_rollouts: bool,
    /// Theory-mode speed flag: rescore only the sampled slots each iteration
    /// and reuse cached scores elsewhere.
    pub cached_scores: bool,
    /// Use the sampled-max regret form instead of the oracle.
    pub use_sampled_regret: bool,
    pub gae_lambda: f64,
    /// Rollouts per level when the stationarity measure needs Monte-Carlo.
    pub phi_mc_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Practical,
            score: ScoreKind::Regret,
            eta_x: 0.5,
            eta_y: 0.1,
            alpha: 0.05,
            xi: 1e-6,
            zeta_prime: 0.05,
            gamma: 0.995,
            weight_bound: 10.0,
            m_per_level: 4,
            batch_levels: 8,
            buffer_size: 32,
            new_levels: 4,
            epochs: 1,
            iterations: 1000,
            eval_cadence: 100,
            anneal_alpha: false,
            baseline: Baseline::ReturnToGo,
            shared_rollouts: false,
            cached_scores: false,
            use_sampled_regret: false,
            gae_lambda: 0.98,
            phi_mc_batch: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Validates hard invariants; returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.mode == Mode::Theory {
            if !self.score.is_zero_sum() {
                return Err(Error::InvalidArgument(format!(
                    "theory mode requires a zero-sum score, got {}",
                    self.score.as_str()
                )));
            }
            if self.epochs != 1 {
                return Err(Error::InvalidArgument(
                    "theory mode runs exactly one pass (epochs = 1)".to_string(),
                ));
            }
            if self.new_levels != 0 {
                return Err(Error::InvalidArgument(
                    "theory mode forbids the dynamic buffer (new_levels = 0)".to_string(),
                ));
            }
            if !(self.alpha > 0.0) {
                return Err(Error::InvalidArgument(
                    "theory mode needs alpha > 0 for strong concavity".to_string(),
                ));
            }
        }
        if self.cached_scores && self.mode == Mode::Practical {
            return Err(Error::InvalidArgument(
                "cached scores are a theory-mode flag; the dynamic buffer rescoring needs fresh scores".to_string(),
            ));
        }
        if self.m_per_level == 0 || self.batch_levels == 0 || self.iterations == 0 {
            return Err(Error::InvalidArgument(
                "m_per_level, batch_levels and iterations must be positive".to_string(),
            ));
        }
        if self.buffer_size < 2 {
            return Err(Error::InvalidArgument("buffer_size must be >= 2".to_string()));
        }
        if self.eval_cadence == 0 {
            return Err(Error::InvalidArgument("eval_cadence must be >= 1".to_string()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".to_string()));
        }
        if !(self.eta_x >= 0.0) || !(self.eta_y >= 0.0) {
            return Err(Error::InvalidArgument("step sizes must be >= 0".to_string()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in (0,1), got {}",
                self.gamma
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidArgument("alpha must be >= 0".to_string()));
        }
        if !(self.xi >= 0.0) || self.xi * self.buffer_size as f64 > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "xi = {} infeasible for buffer size {}",
                self.xi, self.buffer_size
            )));
        }
        if self.score == ScoreKind::Learnability && self.m_per_level < 2 {
            return Err(Error::InvalidArgument(
                "learnability scoring needs m_per_level >= 2".to_string(),
            ));
        }
        let mut warnings = Vec::new();
        if self.mode == Mode::Theory && self.eta_x > 0.0 && self.eta_y < 10.0 * self.eta_x {
            warnings.push(format!(
                "two-timescale separation is weak: eta_y/eta_x = {:.3} < 10",
                self.eta_y / self.eta_x
            ));
        }
        if self.alpha == 0.0 {
            warnings.push("alpha = 0: no strong concavity, analysis constants unavailable".to_string());
        }
        if self.xi == 0.0 && self.alpha > 0.0 {
            warnings.push("xi = 0 with entropy regularization: gradients unbounded near the boundary".to_string());
        }
        Ok(warnings)
    }
}

/// Entropy temperature decay: `alpha / cbrt(t + 1)`.
pub fn alpha_anneal(alpha0: f64, t: usize) -> f64 {
    alpha0 / ((t + 1) as f64).cbrt()
}

/// Index of the smallest stationarity measure; earliest on ties.
pub fn best_iterate_select(measures: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &m) in measures.iter().enumerate() {
        match best {
            Some((_, b)) if m >= b => {}
            _ => best = Some((i, m)),
        }
    }
    best.map(|(i, _)| i)
}

/// The policy-update subroutine. The shipped learner re-applies the clipped
/// REINFORCE SGD step `epochs` times over the iteration's batch.
pub trait PolicyLearner {
    fn update(
        &self,
        policy: &PolicyParams,
        batch: &[(Trajectory, LevelSpec)],
        config: &TrainConfig,
    ) -> Result<PolicyParams>;
}

pub struct ReinforceLearner;

impl PolicyLearner for ReinforceLearner {
    fn update(
        &self,
        policy: &PolicyParams,
        batch: &[(Trajectory, LevelSpec)],
        config: &TrainConfig,
    ) -> Result<PolicyParams> {
        let mut current = policy.clone();
        for _ in 0..config.epochs {
            let refs: Vec<(&Trajectory, &LevelSpec)> =
                batch.iter().map(|(t, l)| (t, l)).collect();
            let estimate = reinforce_gradient(&current, &refs, config.gamma, config.baseline)?;
            current = sgd_step_x(&current, &estimate.grad, config.eta_x)?;
        }
        Ok(current)
    }
}

#[derive(Debug, Clone)]
pub struct BestIterate {
    pub params: PolicyParams,
    /// Stationarity measure (gradient norm of the primal function).
    pub measure: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct LogRow {
    pub iter: usize,
    pub mean_return: f64,
    pub entropy_y: f64,
    pub max_y: f64,
    pub score_kind: ScoreKind,
    /// NaN on iterations without a stationarity evaluation.
    pub phi_grad_norm: f64,
    pub alpha_t: f64,
    pub buffer_generation: u64,
}

pub const TRAIN_LOG_HEADER: &[&str] = &[
    "iter",
    "mean_return",
    "entropy_y",
    "max_y",
    "score_kind",
    "phi_grad_norm",
    "alpha_t",
    "buffer_generation",
];

impl LogRow {
    pub fn to_cells(&self) -> Vec<crate::csvio::Cell> {
        use crate::csvio::Cell;
        vec![
            Cell::Int(self.iter as u64),
            Cell::Float(self.mean_return),
            Cell::Float(self.entropy_y),
            Cell::Float(self.max_y),
            Cell::Text(self.score_kind.as_str().to_string()),
            Cell::Float(self.phi_grad_norm),
            Cell::Float(self.alpha_t),
            Cell::Int(self.buffer_generation),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub iteration: usize,
    pub policy: PolicyParams,
    pub adversary: AdversaryDist,
    pub buffer: LevelBuffer,
    pub best: Option<BestIterate>,
    pub log: Vec<LogRow>,
    pub warnings: Vec<String>,
}

// salt tags for the per-purpose rng sub-streams
const SALT_SAMPLE: u64 = 0;
const SALT_XBATCH: u64 = 1;
const SALT_SCORE: u64 = 2;
const SALT_NEW_LEVELS: u64 = 3;
const SALT_NEW_SCORE: u64 = 4;
const SALT_PHI: u64 = 5;

fn lenient_entropy(y: &[f64]) -> f64 {
    y.iter().filter(|&&w| w > 0.0).map(|w| -w * w.ln()).sum()
}

struct ScoreBundle {
    values: Vec<f64>,
    /// Per-slot returns, kept when the score kind needs buffer-level stats.
    returns: Vec<Vec<f64>>,
}

fn slot_trajectories(
    policy: &PolicyParams,
    level: &LevelSpec,
    gamma: f64,
    m: usize,
    seed: u64,
    salt: &[u64],
) -> Result<Vec<Trajectory>> {
    (0..m)
        .map(|j| {
            let mut salt = salt.to_vec();
            salt.push(j as u64);
            let mut rng = stream_rng(seed, Stream::Env, &salt);
            rollout(policy, level, gamma, &mut rng)
        })
        .collect()
}

fn pooled_score(
    kind: ScoreKind,
    trajs: &[Trajectory],
    level: &LevelSpec,
    config: &TrainConfig,
) -> Result<f64> {
    debug_assert_ne!(kind, ScoreKind::Learnability, "scored buffer-wide");
    crate::scoring::pooled_score(
        kind,
        trajs,
        level,
        &crate::scoring::PooledScoreOpts {
            gamma: config.gamma,
            use_sampled_regret: config.use_sampled_regret,
            gae_lambda: config.gae_lambda,
        },
    )
}

/// Builds the score vector over the whole buffer for iteration `t`.
///
/// `reuse` maps slots to the iteration's policy-update rollouts when score
/// sharing is on. Learnability needs equal batch sizes per level, so it
/// always draws fresh rollouts.
fn build_scores(
    policy: &PolicyParams,
    buffer: &LevelBuffer,
    config: &TrainConfig,
    t: usize,
    reuse: Option<&BTreeMap<usize, Vec<Trajectory>>>,
) -> Result<ScoreBundle> {
    let n = buffer.len();
    if config.score == ScoreKind::Learnability {
        let mut returns = Vec::with_capacity(n);
        for (slot, level) in buffer.levels().iter().enumerate() {
            let trajs = slot_trajectories(
                policy,
                level,
                config.gamma,
                config.m_per_level,
                config.seed,
                &[t as u64, SALT_SCORE, slot as u64],
            )?;
            returns.push(
                trajs
                    .iter()
                    .map(|tr| crate::env::discounted_return(tr, config.gamma))
                    .collect::<Vec<f64>>(),
            );
        }
        let values = score_learnability_general(&returns)?;
        return Ok(ScoreBundle { values, returns });
    }

    let mut values = Vec::with_capacity(n);
    for (slot, level) in buffer.levels().iter().enumerate() {
        if config.cached_scores && t > 0 {
            let sampled = reuse.map_or(false, |m| m.contains_key(&slot));
            if !sampled {
                if let Some(cached) = buffer.last_scores()[slot] {
                    values.push(cached);
                    continue;
                }
            }
        }
        let fresh;
        let trajs: &[Trajectory] = match reuse.and_then(|m| m.get(&slot)) {
            Some(shared) => shared,
            None => {
                fresh = slot_trajectories(
                    policy,
                    level,
                    config.gamma,
                    config.m_per_level,
                    config.seed,
                    &[t as u64, SALT_SCORE, slot as u64],
                )?;
                &fresh
            }
        };
        values.push(pooled_score(config.score, trajs, level, config)?);
    }
    Ok(ScoreBundle {
        values,
        returns: Vec::new(),
    })
}

fn stationarity_mode(buffer: &LevelBuffer, config: &TrainConfig, t: usize) -> GradMode {
    let all_matrix = buffer
        .levels()
        .iter()
        .all(|l| l.kind() == LevelKind::MatrixGame);
    if all_matrix {
        GradMode::Exact
    } else {
        GradMode::MonteCarlo {
            m: config.phi_mc_batch.max(2),
            seed: derive_seed(config.seed, Stream::Estimator, &[t as u64, SALT_PHI]),
            salt: 0,
        }
    }
}

/// Trains on a freshly sampled buffer.
pub fn train(config: &TrainConfig, space: &SpaceConfig) -> Result<TrainState> {
    let mut rng = stream_rng(config.seed, Stream::Levels, &[u64::MAX]);
    let buffer = init_buffer(space, config.buffer_size, &mut rng)?;
    train_with_buffer(config, space, buffer)
}

/// Trains on an explicit starting buffer.
pub fn train_with_buffer(
    config: &TrainConfig,
    space: &SpaceConfig,
    buffer: LevelBuffer,
) -> Result<TrainState> {
    train_with_learner(config, space, buffer, &ReinforceLearner)
}

pub fn train_with_learner<L: PolicyLearner>(
    config: &TrainConfig,
    space: &SpaceConfig,
    buffer: LevelBuffer,
    learner: &L,
) -> Result<TrainState> {
    train_with_hooks(config, space, buffer, learner, &mut |_| Ok(()))
}

/// Training loop with an observer called after every stationarity
/// evaluation (the eval cadence and the final iteration); the experiment
/// layer hangs checkpointing off it.
pub fn train_with_hooks<L: PolicyLearner>(
    config: &TrainConfig,
    space: &SpaceConfig,
    buffer: LevelBuffer,
    learner: &L,
    on_eval: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    let warnings = config.validate()?;
    space.validate()?;
    if buffer.len() != config.buffer_size {
        return Err(Error::Mismatch(format!(
            "buffer has {} levels, config expects {}",
            buffer.len(),
            config.buffer_size
        )));
    }
    let n_actions = space.n_actions();
    if buffer.levels().iter().any(|l| l.n_actions() != n_actions) {
        return Err(Error::Mismatch(
            "buffer levels disagree with the space's action count".to_string(),
        ));
    }

    let mut state = TrainState {
        iteration: 0,
        policy: PolicyParams::new(n_actions, config.zeta_prime, config.weight_bound)?,
        adversary: AdversaryDist::uniform(buffer.len(), config.xi, config.alpha)?,
        buffer,
        best: None,
        log: Vec::with_capacity(config.iterations),
        warnings,
    };

    for t in 0..config.iterations {
        run_iteration(&mut state, config, space, learner, t)
            .map_err(|e| Error::NonFinite(format!("aborted at iteration {t}: {e}")))?;
        if (t + 1) % config.eval_cadence == 0 || t + 1 == config.iterations {
            on_eval(&state)?;
        }
    }
    Ok(state)
}

fn run_iteration<L: PolicyLearner>(
    state: &mut TrainState,
    config: &TrainConfig,
    space: &SpaceConfig,
    learner: &L,
    t: usize,
) -> Result<()> {
    let alpha_t = if config.anneal_alpha {
        alpha_anneal(config.alpha, t)
    } else {
        config.alpha
    };

    // sample the training levels from the adversary
    let mut sample_rng = stream_rng(config.seed, Stream::Levels, &[t as u64, SALT_SAMPLE]);
    let sampled_slots: Vec<usize> = (0..config.batch_levels)
        .map(|_| sample_index(&state.adversary.weights, &mut sample_rng))
        .collect();

    // policy-update rollouts, grouped by slot for optional score sharing
    let mut batch: Vec<(Trajectory, LevelSpec)> =
        Vec::with_capacity(config.batch_levels * config.m_per_level);
    let mut by_slot: BTreeMap<usize, Vec<Trajectory>> = BTreeMap::new();
    for (b, &slot) in sampled_slots.iter().enumerate() {
        let level = state.buffer.level(slot).clone();
        let trajs = slot_trajectories(
            &state.policy,
            &level,
            config.gamma,
            config.m_per_level,
            config.seed,
            &[t as u64, SALT_XBATCH, b as u64],
        )?;
        for traj in &trajs {
            batch.push((traj.clone(), level.clone()));
        }
        by_slot.entry(slot).or_default().extend(trajs);
    }
    let mean_return = batch
        .iter()
        .map(|(traj, _)| crate::env::discounted_return(traj, config.gamma))
        .sum::<f64>()
        / batch.len() as f64;

    // score vector over the buffer, before any update
    let reuse = if config.shared_rollouts && config.score != ScoreKind::Learnability {
        Some(&by_slot)
    } else {
        None
    };
    let mut scores = build_scores(&state.policy, &state.buffer, config, t, reuse)?;

    // dynamic buffer: fresh levels compete before the ascent step
    if config.mode == Mode::Practical && config.new_levels > 0 {
        let mut level_rng = stream_rng(config.seed, Stream::Levels, &[t as u64, SALT_NEW_LEVELS]);
        let new_levels: Vec<LevelSpec> = (0..config.new_levels)
            .map(|_| crate::env::sample_level_uniform(space, &mut level_rng))
            .collect::<Result<_>>()?;
        let new_scores: Vec<f64> = if config.score == ScoreKind::Learnability {
            // score the union so the entrants are comparable with incumbents
            let mut union_returns = scores.returns.clone();
            for (k, level) in new_levels.iter().enumerate() {
                let trajs = slot_trajectories(
                    &state.policy,
                    level,
                    config.gamma,
                    config.m_per_level,
                    config.seed,
                    &[t as u64, SALT_NEW_SCORE, k as u64],
                )?;
                union_returns.push(
                    trajs
                        .iter()
                        .map(|tr| crate::env::discounted_return(tr, config.gamma))
                        .collect(),
                );
            }
            let union_scores = score_learnability_general(&union_returns)?;
            let (old, new) = union_scores.split_at(state.buffer.len());
            scores.values = old.to_vec();
            new.to_vec()
        } else {
            new_levels
                .iter()
                .enumerate()
                .map(|(k, level)| {
                    let trajs = slot_trajectories(
                        &state.policy,
                        level,
                        config.gamma,
                        config.m_per_level,
                        config.seed,
                        &[t as u64, SALT_NEW_SCORE, k as u64],
                    )?;
                    pooled_score(config.score, &trajs, level, config)
                })
                .collect::<Result<_>>()?
        };
        let update = dynamic_update(
            &state.buffer,
            &state.adversary.weights,
            config.xi,
            &new_levels,
            &scores.values,
            &new_scores,
        )?;
        state.buffer = update.buffer;
        state.adversary.weights = update.weights;
        scores.values = update.merged_scores;
    } else {
        state.buffer.note_scored(&scores.values)?;
    }

    // policy update on the sampled batch (scores were built pre-update)
    state.policy = learner.update(&state.policy, &batch, config)?;
    if !state.policy.table.is_finite() {
        return Err(Error::NonFinite("policy parameters".to_string()));
    }

    // adversary ascent on the (merged) score vector
    state.adversary.alpha = alpha_t;
    let grad_y = adversary_gradient(&scores.values, &state.adversary.weights, alpha_t)?;
    state.adversary.weights =
        ascent_step_y(&state.adversary.weights, &grad_y, config.eta_y, config.xi)?;

    // cadence: stationarity measure and best-iterate tracking
    let eval_now = (t + 1) % config.eval_cadence == 0 || t + 1 == config.iterations;
    let phi = if eval_now && alpha_t > 0.0 {
        let mode = stationarity_mode(&state.buffer, config, t);
        let report = phi_grad_norm(
            &state.policy,
            &state.buffer,
            config.score,
            config.gamma,
            alpha_t,
            config.xi,
            1e-10,
            mode,
        )?;
        let measure = report.norm;
        let improves = state.best.as_ref().map_or(true, |b| measure < b.measure);
        if improves {
            state.best = Some(BestIterate {
                params: state.policy.clone(),
                measure,
                iteration: t,
            });
        }
        measure
    } else {
        f64::NAN
    };

    state.log.push(LogRow {
        iter: t,
        mean_return,
        entropy_y: lenient_entropy(&state.adversary.weights),
        max_y: state
            .adversary
            .weights
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
        score_kind: config.score,
        phi_grad_norm: phi,
        alpha_t,
        buffer_generation: state.buffer.generation(),
    });
    state.iteration = t + 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::make_matrix_level;

    fn matrix_space() -> SpaceConfig {
        SpaceConfig::Matrix {
            actions: 2,
            payoff_low: 0.0,
            payoff_high: 1.0,
        }
    }

    fn four_level_buffer() -> LevelBuffer {
        let levels = vec![
            make_matrix_level(vec![1.0, 0.0]).unwrap(),
            make_matrix_level(vec![0.0, 1.0]).unwrap(),
            make_matrix_level(vec![0.8, 0.2]).unwrap(),
            make_matrix_level(vec![0.3, 0.7]).unwrap(),
        ];
        LevelBuffer::from_levels(levels).unwrap()
    }

    fn theory_config() -> TrainConfig {
        TrainConfig {
            mode: Mode::Theory,
            score: ScoreKind::Regret,
            eta_x: 0.05,
            eta_y: 1.0,
            alpha: 0.05,
            xi: 1e-6,
            zeta_prime: 0.05,
            gamma: 0.995,
            m_per_level: 8,
            batch_levels: 4,
            buffer_size: 4,
            new_levels: 0,
            epochs: 1,
            iterations: 40,
            eval_cadence: 10,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn alpha_anneal_values() {
        assert_eq!(alpha_anneal(0.05, 0), 0.05);
        assert_eq!(alpha_anneal(0.05, 7), 0.025);
        assert!((alpha_anneal(0.05, 26) - 0.05 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn best_iterate_selection() {
        assert_eq!(best_iterate_select(&[3.0, 1.0, 2.0]), Some(1));
        assert_eq!(best_iterate_select(&[5.0]), Some(0));
        assert_eq!(best_iterate_select(&[2.0, 1.0, 1.0]), Some(1));
        assert_eq!(best_iterate_select(&[]), None);
    }

    #[test]
    fn theory_mode_invariants_enforced() {
        let mut config = theory_config();
        config.score = ScoreKind::Learnability;
        assert!(config.validate().is_err());

        let mut config = theory_config();
        config.epochs = 2;
        assert!(config.validate().is_err());

        let mut config = theory_config();
        config.new_levels = 3;
        assert!(config.validate().is_err());

        let mut config = theory_config();
        config.eta_y = 0.1;
        config.eta_x = 0.05;
        let warnings = config.validate().unwrap();
        assert!(warnings.iter().any(|w| w.contains("two-timescale")));
    }

    #[test]
    fn training_is_reproducible() {
        let config = theory_config();
        let a = train_with_buffer(&config, &matrix_space(), four_level_buffer()).unwrap();
        let b = train_with_buffer(&config, &matrix_space(), four_level_buffer()).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.adversary.weights, b.adversary.weights);
        assert_eq!(a.log.len(), b.log.len());
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.mean_return, rb.mean_return);
            assert!(ra.phi_grad_norm == rb.phi_grad_norm || ra.phi_grad_norm.is_nan());
        }
    }

    #[test]
    fn zero_policy_step_freezes_policy() {
        let mut config = theory_config();
        config.eta_x = 0.0;
        config.iterations = 10;
        let state = train_with_buffer(&config, &matrix_space(), four_level_buffer()).unwrap();
        // parameters never move: every materialized row stays at zero
        for (_, row) in state.policy.table.rows() {
            assert!(row.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn zero_adversary_step_keeps_uniform_weights() {
        let mut config = theory_config();
        config.eta_y = 0.0;
        config.iterations = 10;
        let state = train_with_buffer(&config, &matrix_space(), four_level_buffer()).unwrap();
        for w in &state.adversary.weights {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn ascent_step_inert_on_constant_scores() {
        // duplicate constant-payoff level: every trajectory returns the same
        // value, both slots score identically, and the projected ascent step
        // cannot move the uniform weights
        let level = make_matrix_level(vec![0.5, 0.5]).unwrap();
        let buffer = LevelBuffer::from_levels(vec![level.clone(), level]).unwrap();
        let mut config = theory_config();
        config.score = ScoreKind::NegReturn;
        config.buffer_size = 2;
        config.iterations = 30;
        let state = train_with_buffer(&config, &matrix_space(), buffer).unwrap();
        for row in &state.log {
            assert!((row.max_y - 0.5).abs() < 1e-12, "y drifted: {}", row.max_y);
        }
    }

    #[test]
    fn single_level_buffer_reduces_to_plain_reinforce() {
        // both slots hold the same level, so the adversary cannot influence
        // what the policy trains on: the run must match one with y frozen
        let level = make_matrix_level(vec![1.0, 0.0]).unwrap();
        let buffer = LevelBuffer::from_levels(vec![level.clone(), level.clone()]).unwrap();
        let mut config = theory_config();
        config.score = ScoreKind::NegReturn;
        config.buffer_size = 2;
        config.iterations = 60;
        config.eta_x = 0.3;
        let state = train_with_buffer(&config, &matrix_space(), buffer).unwrap();

        let mut frozen = config.clone();
        frozen.eta_y = 0.0;
        let reference = train_with_buffer(
            &frozen,
            &matrix_space(),
            LevelBuffer::from_levels(vec![level.clone(), level]).unwrap(),
        )
        .unwrap();
        assert_eq!(state.policy, reference.policy);

        // and the policy learned to prefer the rewarded action
        let probs = crate::policy::action_distribution(
            &state.policy,
            &crate::env::Observation::Matrix,
        );
        assert!(probs[0] > 0.8, "return not maximized: {probs:?}");
    }

    #[test]
    fn adversary_concentrates_on_high_regret_level() {
        // a level the policy cannot win keeps maximal regret; with a small
        // temperature the adversary should pile mass on it
        let levels = vec![
            make_matrix_level(vec![0.0, 0.0]).unwrap(), // regret stuck at 0? no: optimal 0
            make_matrix_level(vec![1.0, 1.0]).unwrap(), // solved instantly, regret 0
            make_matrix_level(vec![1.0, 0.0]).unwrap(), // learnable
            make_matrix_level(vec![0.0, 1.0]).unwrap(), // learnable
        ];
        let buffer = LevelBuffer::from_levels(levels).unwrap();
        let mut config = theory_config();
        config.iterations = 100;
        config.eta_x = 0.2;
        config.alpha = 0.01;
        let state = train_with_buffer(&config, &matrix_space(), buffer).unwrap();
        // constant-payoff levels have zero regret under any policy; the
        // adversary mass should sit on the two learnable levels
        let w = &state.adversary.weights;
        assert!(w[2] + w[3] > 0.8, "weights {w:?}");
    }

    #[test]
    fn practical_mode_with_empty_new_set_matches_static_run() {
        let mut practical = theory_config();
        practical.mode = Mode::Practical;
        practical.new_levels = 0;
        let theory = theory_config();
        let a = train_with_buffer(&practical, &matrix_space(), four_level_buffer()).unwrap();
        let b = train_with_buffer(&theory, &matrix_space(), four_level_buffer()).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.adversary.weights, b.adversary.weights);
    }

    #[test]
    fn dynamic_buffer_changes_levels() {
        let mut config = theory_config();
        config.mode = Mode::Practical;
        config.new_levels = 2;
        config.iterations = 30;
        let state = train_with_buffer(&config, &matrix_space(), four_level_buffer()).unwrap();
        assert!(state.buffer.generation() > 0, "no buffer turnover");
        let total: f64 = state.adversary.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn annealing_is_logged() {
        let mut config = theory_config();
        config.anneal_alpha = true;
        config.iterations = 8;
        let state = train_with_buffer(&config, &matrix_space(), four_level_buffer()).unwrap();
        assert_eq!(state.log[0].alpha_t, 0.05);
        assert_eq!(state.log[7].alpha_t, 0.025);
    }

    #[test]
    fn best_iterate_measure_is_nonincreasing() {
        let mut config = theory_config();
        config.iterations = 60;
        config.eval_cadence = 5;
        let state = train_with_buffer(&config, &matrix_space(), four_level_buffer()).unwrap();
        let best = state.best.expect("best iterate recorded");
        let evaluated: Vec<f64> = state
            .log
            .iter()
            .map(|r| r.phi_grad_norm)
            .filter(|v| !v.is_nan())
            .collect();
        let min = evaluated.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!((best.measure - min).abs() < 1e-12);
    }

    #[test]
    fn shared_rollouts_flag_changes_score_sampling_only() {
        let mut shared = theory_config();
        shared.shared_rollouts = true;
        let state = train_with_buffer(&shared, &matrix_space(), four_level_buffer()).unwrap();
        assert_eq!(state.iteration, shared.iterations);
    }

    #[test]
    fn cached_scores_run_matches_iteration_count() {
        let mut config = theory_config();
        config.cached_scores = true;
        let state = train_with_buffer(&config, &matrix_space(), four_level_buffer()).unwrap();
        assert_eq!(state.iteration, config.iterations);
        // cached mode is rejected in practical runs
        let mut bad = config.clone();
        bad.mode = Mode::Practical;
        assert!(bad.validate().is_err());
    }
}
