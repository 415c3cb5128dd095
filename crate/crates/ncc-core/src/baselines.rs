//! Comparison samplers: domain randomization, prioritized replay, and
//! learnability-filtered sampling, each wrapped in a training loop that
//! shares the policy learner and log schema with the main trainer.

use crate::buffer::{init_buffer, LevelBuffer};
use crate::env::{rollout, sample_index, LevelSpec, SpaceConfig, Trajectory};
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rng::{stream_rng, Stream};
use crate::scoring::{pooled_score, score_learnability_binary, PooledScoreOpts, ScoreKind};
use crate::trainer::{LogRow, PolicyLearner, ReinforceLearner, TrainConfig};
use rand::Rng;
use std::collections::HashSet;

/// Replay-prioritization knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlrConfig {
    /// Probability of drawing from the buffer instead of a fresh level.
    pub replay_prob: f64,
    /// Mixture weight of the staleness-proportional term.
    pub staleness_coeff: f64,
    /// Rank-prioritization temperature; weights follow `rank^(-1/temperature)`.
    pub temperature: f64,
}

impl Default for PlrConfig {
    fn default() -> Self {
        Self {
            replay_prob: 0.5,
            staleness_coeff: 0.3,
            temperature: 1.0,
        }
    }
}

impl PlrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.replay_prob) || !(0.0..=1.0).contains(&self.staleness_coeff)
        {
            return Err(Error::InvalidArgument(
                "replay_prob and staleness_coeff must lie in [0,1]".to_string(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Learnability-filter knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SflConfig {
    /// Candidate levels scored per refresh batch.
    pub batch_size: usize,
    pub num_batches: usize,
    /// Levels kept from the scored candidates.
    pub top_set_size: usize,
    /// Rollouts per candidate for the success-variance estimate.
    pub rollouts_per_level: usize,
    /// Share of training draws taken from the top set (the rest are fresh).
    pub mix_ratio: f64,
    /// Iterations between top-set refreshes.
    pub refresh_every: usize,
}

impl Default for SflConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            num_batches: 5,
            top_set_size: 16,
            rollouts_per_level: 8,
            mix_ratio: 0.5,
            refresh_every: 100,
        }
    }
}

impl SflConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.num_batches == 0 || self.rollouts_per_level == 0 {
            return Err(Error::InvalidArgument(
                "sfl batch sizes must be positive".to_string(),
            ));
        }
        if self.top_set_size == 0 || self.top_set_size > self.batch_size * self.num_batches {
            return Err(Error::InvalidArgument(format!(
                "top set size {} outside (0, {}]",
                self.top_set_size,
                self.batch_size * self.num_batches
            )));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(Error::InvalidArgument("mix_ratio must lie in [0,1]".to_string()));
        }
        if self.refresh_every == 0 {
            return Err(Error::InvalidArgument("refresh_every must be >= 1".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplerConfig {
    Dr,
    Plr(PlrConfig),
    Sfl(SflConfig),
}

impl SamplerConfig {
    pub fn method_name(&self) -> &'static str {
        match self {
            SamplerConfig::Dr => "dr",
            SamplerConfig::Plr(_) => "plr",
            SamplerConfig::Sfl(_) => "sfl",
        }
    }
}

/// I.i.d. uniform levels from the space.
pub fn dr_sampler<R: Rng>(
    space: &SpaceConfig,
    count: usize,
    rng: &mut R,
) -> Result<Vec<LevelSpec>> {
    if count == 0 {
        return Err(Error::InvalidArgument("dr batch must be >= 1".to_string()));
    }
    (0..count)
        .map(|_| crate::env::sample_level_uniform(space, rng))
        .collect()
}

/// The replay distribution over buffer slots:
/// `(1 - staleness_coeff) * rank^(-1/temperature)-normalized
///  + staleness_coeff * staleness-proportional`.
/// An unscored buffer falls back to uniform over slots.
pub fn plr_replay_distribution(buffer: &LevelBuffer, config: &PlrConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let n = buffer.len();
    if !buffer.fully_scored() {
        return Ok(vec![1.0 / n as f64; n]);
    }
    // rank 1 = highest score; ties broken by slot order for determinism
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let sa = buffer.last_scores()[a].unwrap();
        let sb = buffer.last_scores()[b].unwrap();
        sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
    });
    let mut rank_weights = vec![0.0; n];
    for (rank0, &slot) in order.iter().enumerate() {
        rank_weights[slot] = ((rank0 + 1) as f64).powf(-1.0 / config.temperature);
    }
    let rank_total: f64 = rank_weights.iter().sum();
    for w in &mut rank_weights {
        *w /= rank_total;
    }

    let stale_total: u64 = buffer.staleness().iter().sum();
    let stale_weights: Vec<f64> = if stale_total == 0 {
        vec![1.0 / n as f64; n]
    } else {
        buffer
            .staleness()
            .iter()
            .map(|&s| s as f64 / stale_total as f64)
            .collect()
    };

    let c = config.staleness_coeff;
    Ok(rank_weights
        .iter()
        .zip(&stale_weights)
        .map(|(r, s)| (1.0 - c) * r + c * s)
        .collect())
}

/// One prioritized draw: a buffer slot with probability `replay_prob`, a
/// fresh uniform level otherwise.
#[derive(Debug, Clone)]
pub enum PlrDraw {
    Replay(usize),
    Fresh(LevelSpec),
}

pub fn plr_sampler<R: Rng>(
    buffer: &LevelBuffer,
    space: &SpaceConfig,
    config: &PlrConfig,
    rng: &mut R,
) -> Result<PlrDraw> {
    config.validate()?;
    let u: f64 = rng.gen();
    if u < config.replay_prob {
        let dist = plr_replay_distribution(buffer, config)?;
        Ok(PlrDraw::Replay(sample_index(&dist, rng)))
    } else {
        Ok(PlrDraw::Fresh(crate::env::sample_level_uniform(space, rng)?))
    }
}

/// Scores `num_batches * batch_size` uniform levels by binary learnability
/// and returns the top set (score descending, ties by id ascending).
pub fn sfl_sampler<P: crate::env::ActionPolicy, R: Rng>(
    policy: &P,
    space: &SpaceConfig,
    config: &SflConfig,
    gamma: f64,
    rng: &mut R,
) -> Result<Vec<LevelSpec>> {
    config.validate()?;
    let total = config.batch_size * config.num_batches;
    let mut scored: Vec<(f64, LevelSpec)> = Vec::with_capacity(total);
    for _ in 0..total {
        let level = crate::env::sample_level_uniform(space, rng)?;
        let outcomes: Vec<f64> = (0..config.rollouts_per_level)
            .map(|_| {
                rollout(policy, &level, gamma, rng).map(|t| if t.solved() { 1.0 } else { 0.0 })
            })
            .collect::<Result<_>>()?;
        scored.push((score_learnability_binary(&outcomes)?, level));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| a.1.id.cmp(&b.1.id))
    });
    Ok(scored
        .into_iter()
        .take(config.top_set_size)
        .map(|(_, l)| l)
        .collect())
}

/// Result of one baseline training run.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub policy: PolicyParams,
    pub log: Vec<LogRow>,
    /// Ids of every level the policy trained on.
    pub train_ids: HashSet<u64>,
    pub buffer: Option<LevelBuffer>,
}

fn update_policy(
    policy: &PolicyParams,
    batch: &[(Trajectory, LevelSpec)],
    config: &TrainConfig,
) -> Result<PolicyParams> {
    ReinforceLearner.update(policy, batch, config)
}

fn rollouts_for(
    policy: &PolicyParams,
    level: &LevelSpec,
    config: &TrainConfig,
    salt: &[u64],
) -> Result<Vec<Trajectory>> {
    (0..config.m_per_level)
        .map(|j| {
            let mut salt = salt.to_vec();
            salt.push(j as u64);
            let mut rng = stream_rng(config.seed, Stream::Env, &salt);
            rollout(policy, level, config.gamma, &mut rng)
        })
        .collect()
}

fn log_row(t: usize, mean_return: f64, kind: ScoreKind, generation: u64) -> LogRow {
    LogRow {
        iter: t,
        mean_return,
        entropy_y: f64::NAN,
        max_y: f64::NAN,
        score_kind: kind,
        phi_grad_norm: f64::NAN,
        alpha_t: f64::NAN,
        buffer_generation: generation,
    }
}

/// Domain randomization: train on fresh uniform levels every iteration.
///
/// Fresh levels come from the same derived stream the replay baseline uses
/// for its fresh branch, so the two runs coincide when replay is disabled.
pub fn run_dr(config: &TrainConfig, space: &SpaceConfig) -> Result<BaselineRun> {
    space.validate()?;
    let mut policy = PolicyParams::new(space.n_actions(), config.zeta_prime, config.weight_bound)?;
    let mut log = Vec::with_capacity(config.iterations);
    let mut train_ids = HashSet::new();
    for t in 0..config.iterations {
        let mut batch = Vec::with_capacity(config.batch_levels * config.m_per_level);
        for b in 0..config.batch_levels {
            let mut level_rng =
                stream_rng(config.seed, Stream::Levels, &[t as u64, b as u64, 1]);
            let level = crate::env::sample_level_uniform(space, &mut level_rng)?;
            train_ids.insert(level.id);
            let trajs = rollouts_for(&policy, &level, config, &[t as u64, 1, b as u64])?;
            for traj in trajs {
                batch.push((traj, level.clone()));
            }
        }
        let mean_return = batch
            .iter()
            .map(|(traj, _)| crate::env::discounted_return(traj, config.gamma))
            .sum::<f64>()
            / batch.len() as f64;
        policy = update_policy(&policy, &batch, config)?;
        log.push(log_row(t, mean_return, config.score, 0));
    }
    Ok(BaselineRun {
        policy,
        log,
        train_ids,
        buffer: None,
    })
}

/// Prioritized replay: draws mix replayed high-score levels with fresh ones;
/// replayed slots are rescored in place, fresh levels compete for the
/// lowest-scoring slot.
pub fn run_plr(
    config: &TrainConfig,
    plr: &PlrConfig,
    space: &SpaceConfig,
) -> Result<BaselineRun> {
    space.validate()?;
    plr.validate()?;
    let score_opts = PooledScoreOpts {
        gamma: config.gamma,
        use_sampled_regret: config.use_sampled_regret,
        gae_lambda: config.gae_lambda,
    };
    let mut init_rng = stream_rng(config.seed, Stream::Levels, &[u64::MAX]);
    let mut buffer = init_buffer(space, config.buffer_size, &mut init_rng)?;
    let mut policy = PolicyParams::new(space.n_actions(), config.zeta_prime, config.weight_bound)?;
    let mut log = Vec::with_capacity(config.iterations);
    let mut train_ids = HashSet::new();
    for t in 0..config.iterations {
        buffer.tick_staleness();
        let mut batch = Vec::with_capacity(config.batch_levels * config.m_per_level);
        for b in 0..config.batch_levels {
            // branch decision and fresh-level draw on separate streams so a
            // replay_prob of 0 reproduces the domain-randomization run
            let mut decision_rng =
                stream_rng(config.seed, Stream::Levels, &[t as u64, b as u64, 0]);
            let u: f64 = decision_rng.gen();
            let (level, slot) = if u < plr.replay_prob {
                let dist = plr_replay_distribution(&buffer, plr)?;
                let slot = sample_index(&dist, &mut decision_rng);
                (buffer.level(slot).clone(), Some(slot))
            } else {
                let mut level_rng =
                    stream_rng(config.seed, Stream::Levels, &[t as u64, b as u64, 1]);
                (crate::env::sample_level_uniform(space, &mut level_rng)?, None)
            };
            train_ids.insert(level.id);
            let trajs = rollouts_for(&policy, &level, config, &[t as u64, 1, b as u64])?;
            let score = pooled_score(config.score, &trajs, &level, &score_opts)?;
            match slot {
                Some(slot) => buffer.note_scored_slot(slot, score),
                None => {
                    buffer.replace_min_if_better(level.clone(), score);
                }
            }
            for traj in trajs {
                batch.push((traj, level.clone()));
            }
        }
        let mean_return = batch
            .iter()
            .map(|(traj, _)| crate::env::discounted_return(traj, config.gamma))
            .sum::<f64>()
            / batch.len() as f64;
        policy = update_policy(&policy, &batch, config)?;
        log.push(log_row(t, mean_return, config.score, buffer.generation()));
    }
    Ok(BaselineRun {
        policy,
        log,
        train_ids,
        buffer: Some(buffer),
    })
}

/// Learnability filtering: periodically rebuild a top set of
/// intermediate-difficulty levels and mix them with fresh draws.
pub fn run_sfl(
    config: &TrainConfig,
    sfl: &SflConfig,
    space: &SpaceConfig,
) -> Result<BaselineRun> {
    space.validate()?;
    sfl.validate()?;
    let mut policy = PolicyParams::new(space.n_actions(), config.zeta_prime, config.weight_bound)?;
    let mut log = Vec::with_capacity(config.iterations);
    let mut train_ids = HashSet::new();
    let mut top_set: Vec<LevelSpec> = Vec::new();
    let mut refreshes = 0u64;
    for t in 0..config.iterations {
        if t % sfl.refresh_every == 0 {
            let mut rng = stream_rng(config.seed, Stream::Levels, &[t as u64, 7]);
            top_set = sfl_sampler(&policy, space, sfl, config.gamma, &mut rng)?;
            refreshes += 1;
        }
        let mut batch = Vec::with_capacity(config.batch_levels * config.m_per_level);
        for b in 0..config.batch_levels {
            let mut rng = stream_rng(config.seed, Stream::Levels, &[t as u64, b as u64]);
            let u: f64 = rng.gen();
            let level = if u < sfl.mix_ratio && !top_set.is_empty() {
                top_set[rng.gen_range(0..top_set.len())].clone()
            } else {
                crate::env::sample_level_uniform(space, &mut rng)?
            };
            train_ids.insert(level.id);
            let trajs = rollouts_for(&policy, &level, config, &[t as u64, 1, b as u64])?;
            for traj in trajs {
                batch.push((traj, level.clone()));
            }
        }
        let mean_return = batch
            .iter()
            .map(|(traj, _)| crate::env::discounted_return(traj, config.gamma))
            .sum::<f64>()
            / batch.len() as f64;
        policy = update_policy(&policy, &batch, config)?;
        log.push(log_row(t, mean_return, config.score, refreshes - 1));
    }
    Ok(BaselineRun {
        policy,
        log,
        train_ids,
        buffer: None,
    })
}
