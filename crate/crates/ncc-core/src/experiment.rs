//! Experiment orchestration: per-seed training, evaluation, robustness
//! curves, constants reports, and deterministic artifact emission.
//!
//! Seeds run as independent jobs over a bounded worker pool; every file a
//! run writes is reproduced byte-for-byte by rerunning with the same
//! resolved config (the manifest), since nothing emitted carries a
//! timestamp.

use crate::analysis::{
    constants_report, measure_policy_constants, phi_value, ConstantsInputs, GradMode,
    PolicyFamily,
};
use crate::baselines::{run_dr, run_plr, run_sfl};
use crate::buffer::buffer_to_string;
use crate::config::{ExperimentConfig, MethodName};
use crate::csvio::{write_csv, Cell};
use crate::env::{sample_level_uniform, LevelKind, LevelSpec, SpaceConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    cvar_csv_rows, cvar_eval, eval_csv_rows, evaluate, CvarCurve, EvalReport, CVAR_CSV_HEADER,
    EVAL_CSV_HEADER,
};
use crate::policy::{policy_to_string, PolicyParams};
use crate::rng::{stream_rng, Stream};
use crate::scoring::ScoreKind;
use crate::trainer::{train_with_hooks, LogRow, ReinforceLearner, TrainState, TRAIN_LOG_HEADER};
use rayon::prelude::*;
use std::collections::HashSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct SeedSummary {
    pub method: String,
    pub seed: u64,
    /// Mean training-batch return at the final iteration.
    pub train_mean_return: f64,
    pub eval_mean_return: f64,
    pub eval_solve_rate: f64,
    /// The robustness curve, one point per configured alpha.
    pub cvar: Vec<(f64, f64)>,
    pub overlap_warning: bool,
    /// Best-iterate stationarity measure, when the method tracks one.
    pub best_measure: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    /// Ordered by seed.
    pub summaries: Vec<SeedSummary>,
}

pub const SUMMARY_CSV_HEADER: &[&str] =
    &["method", "seed", "mean_return", "solve_rate", "cvar"];

/// Samples a held-out level set with distinct ids, derived from the seed
/// only, so different methods under the same seed share it.
pub fn sample_eval_levels(
    space: &SpaceConfig,
    count: usize,
    seed: u64,
    salt: u64,
) -> Result<Vec<LevelSpec>> {
    let mut rng = stream_rng(seed, Stream::Eval, &[salt]);
    let mut seen = HashSet::new();
    let mut levels = Vec::with_capacity(count);
    let mut attempts = 0;
    while levels.len() < count {
        attempts += 1;
        if attempts > 64 * count {
            return Err(Error::InvalidArgument(format!(
                "could not sample {count} distinct evaluation levels"
            )));
        }
        let level = sample_level_uniform(space, &mut rng)?;
        if seen.insert(level.id) {
            levels.push(level);
        }
    }
    Ok(levels)
}

struct TrainedMethod {
    policy: PolicyParams,
    log: Vec<LogRow>,
    /// Baseline logs carry the method column.
    log_has_method_column: bool,
    train_ids: HashSet<u64>,
    ncc_state: Option<TrainState>,
}

fn train_method(
    config: &ExperimentConfig,
    seed: u64,
    seed_dir: &Path,
) -> Result<TrainedMethod> {
    let train_cfg = config.train_config(seed);
    let method = config.method.name;
    if method.is_ncc() {
        let mut init_rng = stream_rng(seed, Stream::Levels, &[u64::MAX]);
        let buffer = crate::buffer::init_buffer(&config.space, train_cfg.buffer_size, &mut init_rng)?;
        let checkpoint_dir = seed_dir.join("checkpoints");
        std::fs::create_dir_all(&checkpoint_dir)?;
        let mut on_eval = |state: &TrainState| -> Result<()> {
            let tag = state.iteration;
            std::fs::write(
                checkpoint_dir.join(format!("iter_{tag:06}.policy.txt")),
                policy_to_string(&state.policy),
            )?;
            std::fs::write(
                checkpoint_dir.join(format!("iter_{tag:06}.adversary.txt")),
                crate::adversary::adversary_to_string(&state.adversary),
            )?;
            Ok(())
        };
        let state = train_with_hooks(
            &train_cfg,
            &config.space,
            buffer,
            &ReinforceLearner,
            &mut on_eval,
        )?;
        Ok(TrainedMethod {
            policy: state.policy.clone(),
            log: state.log.clone(),
            log_has_method_column: false,
            train_ids: state.buffer.ids(),
            ncc_state: Some(state),
        })
    } else {
        let run = match method {
            MethodName::Dr => run_dr(&train_cfg, &config.space)?,
            MethodName::Plr => run_plr(&train_cfg, &config.method.plr, &config.space)?,
            MethodName::Sfl => run_sfl(&train_cfg, &config.method.sfl, &config.space)?,
            _ => unreachable!(),
        };
        Ok(TrainedMethod {
            policy: run.policy,
            log: run.log,
            log_has_method_column: true,
            train_ids: run.train_ids,
            ncc_state: None,
        })
    }
}

fn write_train_log(path: &Path, log: &[LogRow], method: Option<&str>) -> Result<()> {
    match method {
        None => {
            let rows: Vec<Vec<Cell>> = log.iter().map(|r| r.to_cells()).collect();
            write_csv(path, TRAIN_LOG_HEADER, &rows)
        }
        Some(name) => {
            let mut header = vec!["method"];
            header.extend_from_slice(TRAIN_LOG_HEADER);
            let rows: Vec<Vec<Cell>> = log
                .iter()
                .map(|r| {
                    let mut cells = vec![Cell::Text(name.to_string())];
                    cells.extend(r.to_cells());
                    cells
                })
                .collect();
            write_csv(path, &header, &rows)
        }
    }
}

fn write_constants_report(
    config: &ExperimentConfig,
    seed: u64,
    seed_dir: &Path,
    state: &TrainState,
) -> Result<()> {
    let train_cfg = config.train_config(seed);
    if !(train_cfg.alpha > 0.0 && train_cfg.xi > 0.0) {
        // the smoothness constant is undefined; skip rather than fabricate
        return Ok(());
    }
    let family = PolicyFamily {
        n_actions: config.space.n_actions(),
        zeta_prime: train_cfg.zeta_prime,
        bound: train_cfg.weight_bound,
    };
    let mut probe_rng = stream_rng(seed, Stream::Estimator, &[40]);
    let measured = measure_policy_constants(
        &family,
        &config.space,
        config.analysis.probe_samples,
        &mut probe_rng,
    );
    // primal gap between the fresh policy and the best iterate; a lower
    // bound on the true gap, and only defined for zero-sum scores
    let delta = if train_cfg.score.is_zero_sum() {
        let mode = if config.space.kind() == LevelKind::MatrixGame {
            GradMode::Exact
        } else {
            GradMode::MonteCarlo {
                m: train_cfg.phi_mc_batch.max(2),
                seed,
                salt: 41,
            }
        };
        let fresh = PolicyParams::new(
            config.space.n_actions(),
            train_cfg.zeta_prime,
            train_cfg.weight_bound,
        )?;
        let phi0 = phi_value(
            &fresh,
            &state.buffer,
            train_cfg.score,
            train_cfg.gamma,
            train_cfg.alpha,
            train_cfg.xi,
            1e-10,
            mode,
        )?;
        let best = state.best.as_ref().map(|b| &b.params).unwrap_or(&state.policy);
        let phi_best = phi_value(
            best,
            &state.buffer,
            train_cfg.score,
            train_cfg.gamma,
            train_cfg.alpha,
            train_cfg.xi,
            1e-10,
            mode,
        )?;
        (phi0 - phi_best).max(0.0)
    } else {
        0.0
    };
    let inputs = ConstantsInputs {
        n_levels: train_cfg.buffer_size as f64,
        horizon: config.space.horizon() as f64,
        r_star: config.space.max_abs_return(),
        lipschitz: measured.lipschitz_analytic,
        smoothness: measured.smoothness_analytic,
        zeta: train_cfg.zeta_prime / config.space.n_actions() as f64,
        xi: train_cfg.xi,
        alpha: train_cfg.alpha,
        delta,
        epsilon: config.analysis.epsilon,
    };
    let report = constants_report(&inputs)?;
    std::fs::write(seed_dir.join("constants.txt"), report.to_text())?;
    write_csv(
        &seed_dir.join("constants.csv"),
        crate::analysis::ConstantsReport::csv_header(),
        &[report.csv_row()],
    )?;
    Ok(())
}

fn run_seed(config: &ExperimentConfig, seed: u64, quiet: bool) -> Result<SeedSummary> {
    let method_name = config.method.name.as_str();
    let seed_dir = config.run.out_dir.join(format!("seed_{seed}"));
    std::fs::create_dir_all(&seed_dir)?;

    let trained = match train_method(config, seed, &seed_dir) {
        Ok(t) => t,
        Err(e) => {
            // partial artifacts plus a failure manifest for postmortems
            let manifest = format!(
                "{}\nstatus = failed\nerror = {e}\n",
                crate::config::render_config(config)
            );
            std::fs::write(seed_dir.join("failure_manifest.txt"), manifest)?;
            return Err(e);
        }
    };

    write_train_log(
        &seed_dir.join("train_log.csv"),
        &trained.log,
        trained.log_has_method_column.then_some(method_name),
    )?;
    std::fs::write(
        seed_dir.join("policy_final.txt"),
        policy_to_string(&trained.policy),
    )?;
    if let Some(state) = &trained.ncc_state {
        std::fs::write(
            seed_dir.join("adversary_final.txt"),
            crate::adversary::adversary_to_string(&state.adversary),
        )?;
        std::fs::write(
            seed_dir.join("buffer_final.txt"),
            buffer_to_string(&state.buffer, &state.adversary.weights)?,
        )?;
        if let Some(best) = &state.best {
            std::fs::write(
                seed_dir.join("policy_best.txt"),
                policy_to_string(&best.params),
            )?;
        }
        if config.analysis.constants {
            write_constants_report(config, seed, &seed_dir, state)?;
        }
        for warning in &state.warnings {
            if !quiet {
                eprintln!("[seed {seed}] warning: {warning}");
            }
        }
    }

    // held-out evaluation; the set depends on the seed only, so methods
    // sharing a seed are compared on the same levels
    let eval_levels = sample_eval_levels(&config.space, config.run.eval_levels, seed, 1)?;
    std::fs::write(
        seed_dir.join("eval_levels.txt"),
        crate::env::levels_to_string(&eval_levels),
    )?;
    let report: EvalReport = evaluate(
        &trained.policy,
        &eval_levels,
        config.run.eval_episodes,
        config.gamma,
        seed,
        Some(&trained.train_ids),
    )?;
    write_csv(
        &seed_dir.join("eval.csv"),
        EVAL_CSV_HEADER,
        &eval_csv_rows(&report, method_name, seed),
    )?;
    if report.overlap_warning && !quiet {
        eprintln!("[seed {seed}] warning: evaluation set overlaps training levels by id");
    }

    let candidates = sample_eval_levels(&config.space, config.analysis.cvar_candidates, seed, 2)?;
    let curve: CvarCurve = cvar_eval(
        &trained.policy,
        &candidates,
        &config.analysis.cvar_alphas,
        config.run.eval_episodes,
        config.gamma,
        seed,
        config.analysis.rank_by,
    )?;
    write_csv(
        &seed_dir.join("cvar.csv"),
        CVAR_CSV_HEADER,
        &cvar_csv_rows(&curve, method_name, seed),
    )?;

    let train_mean_return = trained.log.last().map(|r| r.mean_return).unwrap_or(f64::NAN);
    Ok(SeedSummary {
        method: method_name.to_string(),
        seed,
        train_mean_return,
        eval_mean_return: report.mean_return,
        eval_solve_rate: report.mean_solve_rate,
        cvar: curve.points,
        overlap_warning: report.overlap_warning,
        best_measure: trained
            .ncc_state
            .as_ref()
            .and_then(|s| s.best.as_ref())
            .map(|b| b.measure),
    })
}

pub fn summary_rows(summaries: &[SeedSummary]) -> Vec<Vec<Cell>> {
    summaries
        .iter()
        .map(|s| {
            vec![
                Cell::Text(s.method.clone()),
                Cell::Int(s.seed),
                Cell::Float(s.eval_mean_return),
                Cell::Float(s.eval_solve_rate),
                Cell::Float(s.cvar.first().map(|p| p.1).unwrap_or(f64::NAN)),
            ]
        })
        .collect()
}

/// Runs every configured seed, writes all artifacts under the output
/// directory, and returns the per-seed summaries.
pub fn run_experiment(config: &ExperimentConfig, quiet: bool) -> Result<ExperimentOutcome> {
    config.validate()?;
    std::fs::create_dir_all(&config.run.out_dir)?;
    std::fs::write(
        config.run.out_dir.join("manifest.txt"),
        crate::config::render_config(config),
    )?;
    let mut summaries: Vec<SeedSummary> = config
        .run
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, seed, quiet))
        .collect::<Result<_>>()?;
    summaries.sort_by_key(|s| s.seed);
    write_csv(
        &config.run.out_dir.join("summary.csv"),
        SUMMARY_CSV_HEADER,
        &summary_rows(&summaries),
    )?;
    Ok(ExperimentOutcome {
        out_dir: config.run.out_dir.clone(),
        summaries,
    })
}

/// Runs several methods off one base config, each into its own
/// subdirectory, and writes a merged comparison table.
pub fn run_comparison(
    base: &ExperimentConfig,
    methods: &[MethodName],
    quiet: bool,
) -> Result<Vec<ExperimentOutcome>> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods to compare".to_string()));
    }
    std::fs::create_dir_all(&base.run.out_dir)?;
    let outcomes: Vec<ExperimentOutcome> = methods
        .iter()
        .map(|&name| {
            let mut config = base.clone();
            config.method.name = name;
            if !name.is_ncc() {
                // keep baseline configs valid regardless of the base method
                config.method.train.mode = crate::trainer::Mode::Practical;
            }
            config.run.out_dir = base.run.out_dir.join(name.as_str());
            run_experiment(&config, quiet)
        })
        .collect::<Result<_>>()?;
    let mut merged: Vec<Vec<Cell>> = Vec::new();
    for outcome in &outcomes {
        merged.extend(summary_rows(&outcome.summaries));
    }
    write_csv(
        &base.run.out_dir.join("compare.csv"),
        SUMMARY_CSV_HEADER,
        &merged,
    )?;
    Ok(outcomes)
}

/// Per-method aggregate used by the comparison table.
#[derive(Debug, Clone)]
pub struct MethodAggregate {
    pub method: String,
    pub mean_return: f64,
    pub mean_solve_rate: f64,
    pub mean_cvar: f64,
    pub ci95_solve_rate: f64,
    pub seeds: usize,
}

pub fn aggregate(outcome: &ExperimentOutcome) -> MethodAggregate {
    let n = outcome.summaries.len().max(1);
    let solve: Vec<f64> = outcome.summaries.iter().map(|s| s.eval_solve_rate).collect();
    MethodAggregate {
        method: outcome
            .summaries
            .first()
            .map(|s| s.method.clone())
            .unwrap_or_default(),
        mean_return: outcome.summaries.iter().map(|s| s.eval_mean_return).sum::<f64>() / n as f64,
        mean_solve_rate: crate::stats::mean(&solve),
        mean_cvar: outcome
            .summaries
            .iter()
            .map(|s| s.cvar.first().map(|p| p.1).unwrap_or(f64::NAN))
            .sum::<f64>()
            / n as f64,
        ci95_solve_rate: crate::stats::ci95_half_width(&solve),
        seeds: outcome.summaries.len(),
    }
}

/// Dispatch for a single training run outside the full experiment pipeline;
/// used by diagnostics that need a trained state in memory.
pub fn train_once(config: &ExperimentConfig, seed: u64) -> Result<TrainState> {
    if !config.method.name.is_ncc() {
        return Err(Error::InvalidArgument(
            "train_once applies to the adversarial trainer methods".to_string(),
        ));
    }
    let train_cfg = config.train_config(seed);
    crate::trainer::train(&train_cfg, &config.space)
}

/// Scores the method's training signal kind, for display.
pub fn method_score_kind(config: &ExperimentConfig) -> ScoreKind {
    config.train_config(0).score
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn tiny_config(out: &Path) -> ExperimentConfig {
        let text = format!(
            "[env]\nkind = grid\nwidth = 3\nheight = 3\nwall_prob = 0.2\ngamma = 0.9\n\
             [method]\nname = ncc-reg\neta_x = 0.3\nbuffer_size = 4\nbatch_levels = 3\n\
             m_per_level = 2\nnew_levels = 1\nphi_mc_batch = 4\n\
             [run]\niterations = 6\nseeds = 1,2\neval_cadence = 3\neval_levels = 6\n\
             eval_episodes = 2\nout_dir = {}\n\
             [analysis]\nepsilon = 0.05\nconstants = true\nprobe_samples = 20\n\
             cvar_alphas = 50,100\ncvar_candidates = 12\n",
            out.display()
        );
        parse_config(&text).unwrap()
    }

    #[test]
    fn experiment_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(&dir.path().join("run"));
        let outcome = run_experiment(&config, true).unwrap();
        assert_eq!(outcome.summaries.len(), 2);
        for seed in [1u64, 2] {
            let seed_dir = config.run.out_dir.join(format!("seed_{seed}"));
            for file in [
                "train_log.csv",
                "eval.csv",
                "cvar.csv",
                "policy_final.txt",
                "adversary_final.txt",
                "buffer_final.txt",
                "constants.txt",
                "constants.csv",
            ] {
                assert!(seed_dir.join(file).exists(), "missing {file}");
            }
            assert!(seed_dir.join("checkpoints").read_dir().unwrap().count() >= 2);
        }
        assert!(config.run.out_dir.join("manifest.txt").exists());
        assert!(config.run.out_dir.join("summary.csv").exists());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(&dir.path().join("a"));
        run_experiment(&config, true).unwrap();
        let first = std::fs::read_to_string(config.run.out_dir.join("seed_1/train_log.csv")).unwrap();
        let first_sum = std::fs::read_to_string(config.run.out_dir.join("summary.csv")).unwrap();
        config.run.out_dir = dir.path().join("b");
        run_experiment(&config, true).unwrap();
        let second = std::fs::read_to_string(config.run.out_dir.join("seed_1/train_log.csv")).unwrap();
        let second_sum = std::fs::read_to_string(config.run.out_dir.join("summary.csv")).unwrap();
        assert_eq!(first, second);
        assert_eq!(first_sum, second_sum);
    }

    #[test]
    fn manifest_round_trip_reproduces_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(&dir.path().join("orig"));
        run_experiment(&config, true).unwrap();
        let manifest =
            std::fs::read_to_string(config.run.out_dir.join("manifest.txt")).unwrap();
        let mut replay = parse_config(&manifest).unwrap();
        replay.run.out_dir = dir.path().join("replay");
        run_experiment(&replay, true).unwrap();
        let a = std::fs::read_to_string(config.run.out_dir.join("seed_2/eval.csv")).unwrap();
        let b = std::fs::read_to_string(replay.run.out_dir.join("seed_2/eval.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn emitted_csvs_parse_strictly() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(&dir.path().join("strict"));
        run_experiment(&config, true).unwrap();
        let seed_dir = config.run.out_dir.join("seed_1");
        let text = std::fs::read_to_string(seed_dir.join("train_log.csv")).unwrap();
        crate::csvio::read_strict(&text, TRAIN_LOG_HEADER).unwrap();
        let text = std::fs::read_to_string(seed_dir.join("eval.csv")).unwrap();
        crate::csvio::read_strict(&text, EVAL_CSV_HEADER).unwrap();
        let text = std::fs::read_to_string(seed_dir.join("cvar.csv")).unwrap();
        crate::csvio::read_strict(&text, CVAR_CSV_HEADER).unwrap();
        let text =
            std::fs::read_to_string(config.run.out_dir.join("summary.csv")).unwrap();
        crate::csvio::read_strict(&text, SUMMARY_CSV_HEADER).unwrap();
    }

    #[test]
    fn comparison_runs_multiple_methods() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(&dir.path().join("cmp"));
        config.run.seeds = vec![1];
        let outcomes =
            run_comparison(&config, &[MethodName::NccReg, MethodName::Dr], true).unwrap();
        assert_eq!(outcomes.len(), 2);
        assert!(config.run.out_dir.join("compare.csv").exists());
        assert!(config.run.out_dir.join("ncc-reg/summary.csv").exists());
        assert!(config.run.out_dir.join("dr/summary.csv").exists());
        let agg = aggregate(&outcomes[1]);
        assert_eq!(agg.method, "dr");
        assert_eq!(agg.seeds, 1);
    }

    #[test]
    fn baseline_logs_carry_method_column() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(&dir.path().join("plr"));
        config.method.name = MethodName::Plr;
        config.run.seeds = vec![1];
        run_experiment(&config, true).unwrap();
        let text = std::fs::read_to_string(
            config.run.out_dir.join("seed_1/train_log.csv"),
        )
        .unwrap();
        let mut header = vec!["method"];
        header.extend_from_slice(TRAIN_LOG_HEADER);
        let rows = crate::csvio::read_strict(&text, &header).unwrap();
        assert!(rows.iter().all(|r| r[0] == "plr"));
    }
}
