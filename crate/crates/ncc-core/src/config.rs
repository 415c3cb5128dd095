//! Experiment configuration: a plain-text sectioned key-value format.
//!
//! ```text
//! [env]
//! kind = grid
//! width = 5
//! height = 5
//! wall_prob = 0.35
//! gamma = 0.995
//!
//! [method]
//! name = ncc-reg
//! eta_x = 0.5
//! eta_y = 0.1
//!
//! [run]
//! iterations = 2000
//! seeds = 1,2,3
//! out_dir = runs/exp1
//!
//! [analysis]
//! epsilon = 0.05
//! ```
//!
//! Every key has a default; unknown sections or keys are rejected with the
//! offending line number. [`render_config`] emits the fully resolved
//! configuration in canonical order, and parsing that text reproduces the
//! config exactly, which is what makes run manifests replayable.

use crate::baselines::{PlrConfig, SflConfig};
use crate::env::SpaceConfig;
use crate::error::{Error, Result};
use crate::evaluation::CvarRankBy;
use crate::policy::Baseline;
use crate::scoring::ScoreKind;
use crate::trainer::{Mode, TrainConfig};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodName {
    NccReg,
    NccLearn,
    NccNegJ,
    NccPvl,
    Dr,
    Plr,
    Sfl,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::NccReg => "ncc-reg",
            MethodName::NccLearn => "ncc-learn",
            MethodName::NccNegJ => "ncc-negj",
            MethodName::NccPvl => "ncc-pvl",
            MethodName::Dr => "dr",
            MethodName::Plr => "plr",
            MethodName::Sfl => "sfl",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "ncc-reg" => Ok(MethodName::NccReg),
            "ncc-learn" => Ok(MethodName::NccLearn),
            "ncc-negj" => Ok(MethodName::NccNegJ),
            "ncc-pvl" => Ok(MethodName::NccPvl),
            "dr" => Ok(MethodName::Dr),
            "plr" => Ok(MethodName::Plr),
            "sfl" => Ok(MethodName::Sfl),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }

    pub fn is_ncc(self) -> bool {
        matches!(
            self,
            MethodName::NccReg | MethodName::NccLearn | MethodName::NccNegJ | MethodName::NccPvl
        )
    }

    /// The score the method trains its adversary (or replay priority) on.
    pub fn score_kind(self) -> ScoreKind {
        match self {
            MethodName::NccReg | MethodName::Dr | MethodName::Sfl => ScoreKind::Regret,
            MethodName::NccLearn => ScoreKind::Learnability,
            MethodName::NccNegJ => ScoreKind::NegReturn,
            MethodName::NccPvl => ScoreKind::Pvl,
            MethodName::Plr => ScoreKind::Regret,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub name: MethodName,
    /// Template for the per-seed trainer config; seed, iterations and
    /// cadence are filled in from the run block at launch.
    pub train: TrainConfig,
    pub plr: PlrConfig,
    pub sfl: SflConfig,
    /// Score used by the replay baseline's prioritization.
    pub plr_score: ScoreKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub eval_cadence: usize,
    /// Held-out levels sampled per seed.
    pub eval_levels: usize,
    pub eval_episodes: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub epsilon: f64,
    /// Primal gap used by the standalone constants report; per-seed reports
    /// re-estimate it from the finished run.
    pub delta: f64,
    /// Emit the constants report per seed.
    pub constants: bool,
    pub probe_samples: usize,
    pub cvar_alphas: Vec<f64>,
    pub cvar_candidates: usize,
    pub rank_by: CvarRankBy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub space: SpaceConfig,
    pub gamma: f64,
    pub method: MethodConfig,
    pub run: RunConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            space: SpaceConfig::Grid {
                width: 5,
                height: 5,
                wall_prob: 0.35,
                horizon: None,
            },
            gamma: 0.995,
            method: MethodConfig {
                name: MethodName::NccReg,
                train: TrainConfig::default(),
                plr: PlrConfig::default(),
                sfl: SflConfig::default(),
                plr_score: ScoreKind::Regret,
            },
            run: RunConfig {
                iterations: 1000,
                seeds: vec![1],
                eval_cadence: 100,
                eval_levels: 64,
                eval_episodes: 8,
                out_dir: PathBuf::from("runs/out"),
            },
            analysis: AnalysisConfig {
                epsilon: 0.05,
                delta: 1.0,
                constants: true,
                probe_samples: 200,
                cvar_alphas: vec![10.0, 20.0, 50.0, 100.0],
                cvar_candidates: 200,
                rank_by: CvarRankBy::Return,
            },
        }
    }
}

impl ExperimentConfig {
    /// The per-seed trainer config with run-block fields resolved.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut train = self.method.train.clone();
        train.seed = seed;
        train.gamma = self.gamma;
        train.iterations = self.run.iterations;
        train.eval_cadence = self.run.eval_cadence;
        train.score = self.method.name.score_kind();
        if self.method.name == MethodName::Plr {
            train.score = self.plr_score_kind();
        }
        train
    }

    fn plr_score_kind(&self) -> ScoreKind {
        self.method.plr_score
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in (0,1), got {}",
                self.gamma
            )));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed required".to_string()));
        }
        if self.run.iterations == 0 || self.run.eval_cadence == 0 {
            return Err(Error::InvalidArgument(
                "iterations and eval_cadence must be positive".to_string(),
            ));
        }
        if self.run.eval_levels == 0 || self.run.eval_episodes == 0 {
            return Err(Error::InvalidArgument(
                "eval_levels and eval_episodes must be positive".to_string(),
            ));
        }
        if self.method.name.is_ncc() {
            self.train_config(self.run.seeds[0]).validate()?;
        }
        self.method.plr.validate()?;
        self.method.sfl.validate()?;
        if !(self.analysis.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".to_string()));
        }
        for &alpha in &self.analysis.cvar_alphas {
            if !(alpha > 0.0 && alpha <= 100.0) {
                return Err(Error::InvalidArgument(format!(
                    "cvar alpha {alpha} outside (0, 100]"
                )));
            }
        }
        Ok(())
    }
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

fn fmt_f64(v: f64) -> String {
    crate::csvio::fmt_f64(v)
}

/// Renders the fully resolved config in canonical section and key order.
pub fn render_config(config: &ExperimentConfig) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "[env]");
    match &config.space {
        SpaceConfig::Grid {
            width,
            height,
            wall_prob,
            horizon,
        } => {
            let _ = writeln!(out, "kind = grid");
            let _ = writeln!(out, "width = {width}");
            let _ = writeln!(out, "height = {height}");
            let _ = writeln!(out, "wall_prob = {}", fmt_f64(*wall_prob));
            if let Some(t) = horizon {
                let _ = writeln!(out, "horizon = {t}");
            }
        }
        SpaceConfig::Matrix {
            actions,
            payoff_low,
            payoff_high,
        } => {
            let _ = writeln!(out, "kind = matrix");
            let _ = writeln!(out, "actions = {actions}");
            let _ = writeln!(out, "payoff_low = {}", fmt_f64(*payoff_low));
            let _ = writeln!(out, "payoff_high = {}", fmt_f64(*payoff_high));
        }
    }
    let _ = writeln!(out, "gamma = {}", fmt_f64(config.gamma));
    let _ = writeln!(out);

    let m = &config.method;
    let t = &m.train;
    let _ = writeln!(out, "[method]");
    let _ = writeln!(out, "name = {}", m.name.as_str());
    let _ = writeln!(out, "mode = {}", t.mode.as_str());
    let _ = writeln!(out, "eta_x = {}", fmt_f64(t.eta_x));
    let _ = writeln!(out, "eta_y = {}", fmt_f64(t.eta_y));
    let _ = writeln!(out, "alpha = {}", fmt_f64(t.alpha));
    let _ = writeln!(out, "xi = {}", fmt_f64(t.xi));
    let _ = writeln!(out, "zeta_prime = {}", fmt_f64(t.zeta_prime));
    let _ = writeln!(out, "weight_bound = {}", fmt_f64(t.weight_bound));
    let _ = writeln!(out, "m_per_level = {}", t.m_per_level);
    let _ = writeln!(out, "batch_levels = {}", t.batch_levels);
    let _ = writeln!(out, "buffer_size = {}", t.buffer_size);
    let _ = writeln!(out, "new_levels = {}", t.new_levels);
    let _ = writeln!(out, "epochs = {}", t.epochs);
    let _ = writeln!(
        out,
        "baseline = {}",
        match t.baseline {
            Baseline::ReturnToGo => "return-to-go",
            Baseline::LeaveOneOutAdvantage => "loo-advantage",
        }
    );
    let _ = writeln!(out, "anneal_alpha = {}", fmt_bool(t.anneal_alpha));
    let _ = writeln!(out, "shared_rollouts = {}", fmt_bool(t.shared_rollouts));
    let _ = writeln!(out, "cached_scores = {}", fmt_bool(t.cached_scores));
    let _ = writeln!(out, "use_sampled_regret = {}", fmt_bool(t.use_sampled_regret));
    let _ = writeln!(out, "gae_lambda = {}", fmt_f64(t.gae_lambda));
    let _ = writeln!(out, "phi_mc_batch = {}", t.phi_mc_batch);
    let _ = writeln!(out, "plr_score = {}", m.plr_score.as_str());
    let _ = writeln!(out, "replay_prob = {}", fmt_f64(m.plr.replay_prob));
    let _ = writeln!(out, "staleness_coeff = {}", fmt_f64(m.plr.staleness_coeff));
    let _ = writeln!(out, "temperature = {}", fmt_f64(m.plr.temperature));
    let _ = writeln!(out, "sfl_batch_size = {}", m.sfl.batch_size);
    let _ = writeln!(out, "sfl_num_batches = {}", m.sfl.num_batches);
    let _ = writeln!(out, "sfl_top_set = {}", m.sfl.top_set_size);
    let _ = writeln!(out, "sfl_rollouts = {}", m.sfl.rollouts_per_level);
    let _ = writeln!(out, "sfl_mix_ratio = {}", fmt_f64(m.sfl.mix_ratio));
    let _ = writeln!(out, "sfl_refresh_every = {}", m.sfl.refresh_every);
    let _ = writeln!(out);

    let r = &config.run;
    let _ = writeln!(out, "[run]");
    let _ = writeln!(out, "iterations = {}", r.iterations);
    let seeds: Vec<String> = r.seeds.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "seeds = {}", seeds.join(","));
    let _ = writeln!(out, "eval_cadence = {}", r.eval_cadence);
    let _ = writeln!(out, "eval_levels = {}", r.eval_levels);
    let _ = writeln!(out, "eval_episodes = {}", r.eval_episodes);
    let _ = writeln!(out, "out_dir = {}", r.out_dir.display());
    let _ = writeln!(out);

    let a = &config.analysis;
    let _ = writeln!(out, "[analysis]");
    let _ = writeln!(out, "epsilon = {}", fmt_f64(a.epsilon));
    let _ = writeln!(out, "delta = {}", fmt_f64(a.delta));
    let _ = writeln!(out, "constants = {}", fmt_bool(a.constants));
    let _ = writeln!(out, "probe_samples = {}", a.probe_samples);
    let alphas: Vec<String> = a.cvar_alphas.iter().map(|v| fmt_f64(*v)).collect();
    let _ = writeln!(out, "cvar_alphas = {}", alphas.join(","));
    let _ = writeln!(out, "cvar_candidates = {}", a.cvar_candidates);
    let _ = writeln!(
        out,
        "rank_by = {}",
        match a.rank_by {
            CvarRankBy::Return => "return",
            CvarRankBy::SolveRate => "solve-rate",
        }
    );
    out
}

struct Parser<'a> {
    config: ExperimentConfig,
    // env fields collected before the space can be assembled
    env_kind: Option<&'a str>,
    width: usize,
    height: usize,
    wall_prob: f64,
    horizon: Option<usize>,
    actions: usize,
    payoff_low: f64,
    payoff_high: f64,
}

fn parse_err(line: usize, message: String) -> Error {
    Error::Parse { line, message }
}

impl<'a> Parser<'a> {
    fn new() -> Self {
        let config = ExperimentConfig::default();
        let (width, height, wall_prob, horizon) = match config.space {
            SpaceConfig::Grid {
                width,
                height,
                wall_prob,
                horizon,
            } => (width, height, wall_prob, horizon),
            _ => unreachable!(),
        };
        Self {
            config,
            env_kind: None,
            width,
            height,
            wall_prob,
            horizon,
            actions: 2,
            payoff_low: 0.0,
            payoff_high: 1.0,
        }
    }

    fn finish(mut self) -> Result<ExperimentConfig> {
        let kind = self.env_kind.unwrap_or("grid");
        self.config.space = match kind {
            "grid" => SpaceConfig::Grid {
                width: self.width,
                height: self.height,
                wall_prob: self.wall_prob,
                horizon: self.horizon,
            },
            "matrix" => SpaceConfig::Matrix {
                actions: self.actions,
                payoff_low: self.payoff_low,
                payoff_high: self.payoff_high,
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown environment kind '{other}'"
                )))
            }
        };
        self.config.validate()?;
        Ok(self.config)
    }

    fn set(&mut self, section: &str, key: &'a str, value: &'a str, line: usize) -> Result<()> {
        let parse_usize = |v: &str| {
            v.parse::<usize>()
                .map_err(|e| parse_err(line, format!("bad integer '{v}': {e}")))
        };
        let parse_f64 = |v: &str| {
            v.parse::<f64>()
                .map_err(|e| parse_err(line, format!("bad number '{v}': {e}")))
        };
        let parse_bool = |v: &str| match v {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(parse_err(line, format!("bad boolean '{other}'"))),
        };
        match (section, key) {
            ("env", "kind") => self.env_kind = Some(value),
            ("env", "width") => self.width = parse_usize(value)?,
            ("env", "height") => self.height = parse_usize(value)?,
            ("env", "wall_prob") => self.wall_prob = parse_f64(value)?,
            ("env", "horizon") => self.horizon = Some(parse_usize(value)?),
            ("env", "actions") => self.actions = parse_usize(value)?,
            ("env", "payoff_low") => self.payoff_low = parse_f64(value)?,
            ("env", "payoff_high") => self.payoff_high = parse_f64(value)?,
            ("env", "gamma") => self.config.gamma = parse_f64(value)?,

            ("method", "name") => {
                self.config.method.name =
                    MethodName::from_str(value).map_err(|e| parse_err(line, e.to_string()))?
            }
            ("method", "mode") => {
                self.config.method.train.mode =
                    Mode::from_str(value).map_err(|e| parse_err(line, e.to_string()))?
            }
            ("method", "eta_x") => self.config.method.train.eta_x = parse_f64(value)?,
            ("method", "eta_y") => self.config.method.train.eta_y = parse_f64(value)?,
            ("method", "alpha") => self.config.method.train.alpha = parse_f64(value)?,
            ("method", "xi") => self.config.method.train.xi = parse_f64(value)?,
            ("method", "zeta_prime") => self.config.method.train.zeta_prime = parse_f64(value)?,
            ("method", "weight_bound") => {
                self.config.method.train.weight_bound = parse_f64(value)?
            }
            ("method", "m_per_level") => {
                self.config.method.train.m_per_level = parse_usize(value)?
            }
            ("method", "batch_levels") => {
                self.config.method.train.batch_levels = parse_usize(value)?
            }
            ("method", "buffer_size") => {
                self.config.method.train.buffer_size = parse_usize(value)?
            }
            ("method", "new_levels") => self.config.method.train.new_levels = parse_usize(value)?,
            ("method", "epochs") => self.config.method.train.epochs = parse_usize(value)?,
            ("method", "baseline") => {
                self.config.method.train.baseline = match value {
                    "return-to-go" => Baseline::ReturnToGo,
                    "loo-advantage" => Baseline::LeaveOneOutAdvantage,
                    other => return Err(parse_err(line, format!("bad baseline '{other}'"))),
                }
            }
            ("method", "anneal_alpha") => {
                self.config.method.train.anneal_alpha = parse_bool(value)?
            }
            ("method", "shared_rollouts") => {
                self.config.method.train.shared_rollouts = parse_bool(value)?
            }
            ("method", "cached_scores") => {
                self.config.method.train.cached_scores = parse_bool(value)?
            }
            ("method", "use_sampled_regret") => {
                self.config.method.train.use_sampled_regret = parse_bool(value)?
            }
            ("method", "gae_lambda") => self.config.method.train.gae_lambda = parse_f64(value)?,
            ("method", "phi_mc_batch") => {
                self.config.method.train.phi_mc_batch = parse_usize(value)?
            }
            ("method", "plr_score") => {
                self.config.method.plr_score =
                    ScoreKind::from_str(value).map_err(|e| parse_err(line, e.to_string()))?
            }
            ("method", "replay_prob") => self.config.method.plr.replay_prob = parse_f64(value)?,
            ("method", "staleness_coeff") => {
                self.config.method.plr.staleness_coeff = parse_f64(value)?
            }
            ("method", "temperature") => self.config.method.plr.temperature = parse_f64(value)?,
            ("method", "sfl_batch_size") => {
                self.config.method.sfl.batch_size = parse_usize(value)?
            }
            ("method", "sfl_num_batches") => {
                self.config.method.sfl.num_batches = parse_usize(value)?
            }
            ("method", "sfl_top_set") => {
                self.config.method.sfl.top_set_size = parse_usize(value)?
            }
            ("method", "sfl_rollouts") => {
                self.config.method.sfl.rollouts_per_level = parse_usize(value)?
            }
            ("method", "sfl_mix_ratio") => self.config.method.sfl.mix_ratio = parse_f64(value)?,
            ("method", "sfl_refresh_every") => {
                self.config.method.sfl.refresh_every = parse_usize(value)?
            }

            ("run", "iterations") => self.config.run.iterations = parse_usize(value)?,
            ("run", "seeds") => {
                self.config.run.seeds = value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<u64>()
                            .map_err(|e| parse_err(line, format!("bad seed '{s}': {e}")))
                    })
                    .collect::<Result<_>>()?
            }
            ("run", "eval_cadence") => self.config.run.eval_cadence = parse_usize(value)?,
            ("run", "eval_levels") => self.config.run.eval_levels = parse_usize(value)?,
            ("run", "eval_episodes") => self.config.run.eval_episodes = parse_usize(value)?,
            ("run", "out_dir") => self.config.run.out_dir = PathBuf::from(value),

            ("analysis", "epsilon") => self.config.analysis.epsilon = parse_f64(value)?,
            ("analysis", "delta") => self.config.analysis.delta = parse_f64(value)?,
            ("analysis", "constants") => self.config.analysis.constants = parse_bool(value)?,
            ("analysis", "probe_samples") => {
                self.config.analysis.probe_samples = parse_usize(value)?
            }
            ("analysis", "cvar_alphas") => {
                self.config.analysis.cvar_alphas = value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|e| parse_err(line, format!("bad alpha '{s}': {e}")))
                    })
                    .collect::<Result<_>>()?
            }
            ("analysis", "cvar_candidates") => {
                self.config.analysis.cvar_candidates = parse_usize(value)?
            }
            ("analysis", "rank_by") => {
                self.config.analysis.rank_by = match value {
                    "return" => CvarRankBy::Return,
                    "solve-rate" => CvarRankBy::SolveRate,
                    other => return Err(parse_err(line, format!("bad rank_by '{other}'"))),
                }
            }
            (section, key) => {
                return Err(parse_err(
                    line,
                    format!("unknown key '{key}' in section [{section}]"),
                ))
            }
        }
        Ok(())
    }
}

/// Parses config text, rejecting unknown sections and keys.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut parser = Parser::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            if !matches!(name, "env" | "method" | "run" | "analysis") {
                return Err(parse_err(line_no, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err(line_no, format!("expected 'key = value', got '{line}'")));
        };
        let Some(section) = section.as_deref() else {
            return Err(parse_err(line_no, "key outside any section".to_string()));
        };
        parser.set(section, key.trim(), value.trim(), line_no)?;
    }
    parser.finish()
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
