//! Experiment runner: training, evaluation, robustness curves, constants
//! reports, and the projection battery, all from plain-text configs.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ncc_core::adversary::{project_truncated_simplex, projection_qp_oracle};
use ncc_core::analysis::{constants_report, measure_policy_constants, ConstantsInputs, PolicyFamily};
use ncc_core::config::{load_config, ExperimentConfig, MethodName};
use ncc_core::csvio::write_csv;
use ncc_core::env::levels_from_string;
use ncc_core::evaluation::{
    cvar_csv_rows, cvar_eval, eval_csv_rows, evaluate, CvarRankBy, CVAR_CSV_HEADER,
    EVAL_CSV_HEADER,
};
use ncc_core::experiment::{aggregate, run_comparison, run_experiment};
use ncc_core::policy::load_policy;
use ncc_core::rng::{stream_rng, Stream};
use ncc_core::stats::paired_one_sided_t;
use rand::Rng;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "ncc", version, about = "Adversarial curriculum training on desk-scale environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Path to the experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the method name.
    #[arg(long)]
    method: Option<String>,
    /// Suppress warnings and progress chatter.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method per the config and write all artifacts.
    Train(ConfigArgs),
    /// Evaluate a policy checkpoint on a level file.
    Eval {
        /// Policy checkpoint path.
        #[arg(long)]
        policy: PathBuf,
        /// Level file (one level per line).
        #[arg(long)]
        levels: PathBuf,
        #[arg(long, default_value_t = 8)]
        episodes: usize,
        #[arg(long, default_value_t = 0.995)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the per-level report here as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Method label for the CSV rows.
        #[arg(long, default_value = "checkpoint")]
        method: String,
        #[arg(long)]
        quiet: bool,
    },
    /// Worst-case robustness curve for a policy checkpoint.
    Cvar {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        levels: PathBuf,
        /// Comma-separated alpha percentages in (0, 100].
        #[arg(long, default_value = "10,20,50,100")]
        alphas: String,
        #[arg(long, default_value_t = 8)]
        episodes: usize,
        #[arg(long, default_value_t = 0.995)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rank worst levels by `return` or `solve-rate`.
        #[arg(long, default_value = "return")]
        rank_by: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "checkpoint")]
        method: String,
    },
    /// Print the convergence-constants report for a config.
    Constants(ConfigArgs),
    /// Battery: fast simplex projection against the reference oracle.
    ProjectTest {
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = 64)]
        max_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run several methods off one config and summarize.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated method list.
        #[arg(long, default_value = "ncc-reg,dr")]
        methods: String,
    },
}

fn apply_overrides(mut config: ExperimentConfig, args: &ConfigArgs) -> anyhow::Result<ExperimentConfig> {
    if let Some(seed) = args.seed_override {
        config.run.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        config.run.out_dir = out.clone();
    }
    if let Some(method) = &args.method {
        config.method.name =
            MethodName::from_str(method).with_context(|| format!("--method {method}"))?;
    }
    Ok(config)
}

fn load_with_overrides(args: &ConfigArgs) -> anyhow::Result<ExperimentConfig> {
    // any failure to obtain a valid config is a config error (exit 2)
    let config = load_config(&args.config).map_err(|e| match e {
        ncc_core::Error::Parse { .. } | ncc_core::Error::InvalidArgument(_) => e,
        other => ncc_core::Error::Parse {
            line: 0,
            message: format!("{}: {other}", args.config.display()),
        },
    })?;
    let config = apply_overrides(config, args)?;
    config.validate()?;
    Ok(config)
}

fn cmd_train(args: &ConfigArgs) -> anyhow::Result<()> {
    let config = load_with_overrides(args)?;
    let outcome = run_experiment(&config, args.quiet)?;
    if !args.quiet {
        println!(
            "{:<10} {:>6} {:>14} {:>12} {:>12}",
            "method", "seed", "mean_return", "solve_rate", "cvar"
        );
        for s in &outcome.summaries {
            println!(
                "{:<10} {:>6} {:>14.6} {:>12.6} {:>12.6}",
                s.method,
                s.seed,
                s.eval_mean_return,
                s.eval_solve_rate,
                s.cvar.first().map(|p| p.1).unwrap_or(f64::NAN)
            );
        }
        println!("artifacts in {}", outcome.out_dir.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    policy: &PathBuf,
    levels: &PathBuf,
    episodes: usize,
    gamma: f64,
    seed: u64,
    out: Option<&PathBuf>,
    method: &str,
    quiet: bool,
) -> anyhow::Result<()> {
    let policy = load_policy(policy)?;
    let text = std::fs::read_to_string(levels)?;
    let levels = levels_from_string(&text)?;
    let report = evaluate(&policy, &levels, episodes, gamma, seed, None)?;
    if !quiet {
        println!("{:<20} {:>12} {:>12}", "level_id", "mean_return", "solve_rate");
        for e in &report.per_level {
            println!("{:<20} {:>12.6} {:>12.6}", e.level_id, e.mean_return, e.solve_rate);
        }
        println!(
            "aggregate: mean_return {:.6}, solve_rate {:.6} over {} levels",
            report.mean_return,
            report.mean_solve_rate,
            report.per_level.len()
        );
    }
    if let Some(path) = out {
        write_csv(path, EVAL_CSV_HEADER, &eval_csv_rows(&report, method, seed))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_cvar(
    policy: &PathBuf,
    levels: &PathBuf,
    alphas: &str,
    episodes: usize,
    gamma: f64,
    seed: u64,
    rank_by: &str,
    out: Option<&PathBuf>,
    method: &str,
) -> anyhow::Result<()> {
    let policy = load_policy(policy)?;
    let text = std::fs::read_to_string(levels)?;
    let levels = levels_from_string(&text)?;
    let grid: Vec<f64> = alphas
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("alpha '{s}'")))
        .collect::<anyhow::Result<_>>()?;
    let rank_by = match rank_by {
        "return" => CvarRankBy::Return,
        "solve-rate" => CvarRankBy::SolveRate,
        other => bail!("unknown rank-by '{other}'"),
    };
    let curve = cvar_eval(&policy, &levels, &grid, episodes, gamma, seed, rank_by)?;
    println!("{:>8} {:>12}", "alpha", "cvar");
    for (alpha, value) in &curve.points {
        println!("{alpha:>8} {value:>12.6}");
    }
    println!("solvable candidates: {}", curve.solvable_count);
    if let Some(path) = out {
        write_csv(path, CVAR_CSV_HEADER, &cvar_csv_rows(&curve, method, seed))?;
    }
    Ok(())
}

fn cmd_constants(args: &ConfigArgs) -> anyhow::Result<()> {
    let config = load_with_overrides(args)?;
    let train = config.train_config(config.run.seeds[0]);
    let family = PolicyFamily {
        n_actions: config.space.n_actions(),
        zeta_prime: train.zeta_prime,
        bound: train.weight_bound,
    };
    let mut rng = stream_rng(config.run.seeds[0], Stream::Estimator, &[40]);
    let measured = measure_policy_constants(
        &family,
        &config.space,
        config.analysis.probe_samples,
        &mut rng,
    );
    let inputs = ConstantsInputs {
        n_levels: train.buffer_size as f64,
        horizon: config.space.horizon() as f64,
        r_star: config.space.max_abs_return(),
        lipschitz: measured.lipschitz_analytic,
        smoothness: measured.smoothness_analytic,
        zeta: train.zeta_prime / config.space.n_actions() as f64,
        xi: train.xi,
        alpha: train.alpha,
        delta: config.analysis.delta,
        epsilon: config.analysis.epsilon,
    };
    let report = constants_report(&inputs)?;
    print!("{}", report.to_text());
    println!(
        "measured L_hat {} K_hat {} zeta_hat {}",
        ncc_core::csvio::fmt_f64(measured.lipschitz_hat),
        ncc_core::csvio::fmt_f64(measured.smoothness_hat),
        ncc_core::csvio::fmt_f64(measured.zeta_hat),
    );
    let csv = ncc_core::csvio::render_csv(
        ncc_core::analysis::ConstantsReport::csv_header(),
        &[report.csv_row()],
    )?;
    print!("{csv}");
    Ok(())
}

fn cmd_project_test(points: usize, max_dim: usize, seed: u64) -> anyhow::Result<()> {
    let xis = [0.0, 1e-6, 0.01];
    let mut rng = stream_rng(seed, Stream::Estimator, &[99]);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for case in 0..points {
        let dim = rng.gen_range(1..=max_dim);
        let xi = xis[case % xis.len()];
        if xi * dim as f64 > 1.0 {
            continue;
        }
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let fast = project_truncated_simplex(&v, xi)?;
        let oracle = projection_qp_oracle(&v, xi)?;
        let dev = fast
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        worst = worst.max(dev);
        checked += 1;
    }
    let pass = worst <= 1e-8;
    println!(
        "projection battery: {checked} points, max |fast - oracle| = {worst:.3e}, {}",
        if pass { "PASS" } else { "FAIL" }
    );
    if !pass {
        bail!("projection deviates from the oracle by {worst:.3e}");
    }
    Ok(())
}

fn cmd_compare(args: &ConfigArgs, methods: &str) -> anyhow::Result<()> {
    let config = load_with_overrides(args)?;
    let names: Vec<MethodName> = methods
        .split(',')
        .map(|s| MethodName::from_str(s.trim()).map_err(anyhow::Error::from))
        .collect::<anyhow::Result<_>>()?;
    let outcomes = run_comparison(&config, &names, args.quiet)?;
    println!(
        "{:<10} {:>6} {:>14} {:>12} {:>12} {:>14}",
        "method", "seeds", "mean_return", "solve_rate", "ci95", "cvar"
    );
    for outcome in &outcomes {
        let agg = aggregate(outcome);
        println!(
            "{:<10} {:>6} {:>14.6} {:>12.6} {:>12.6} {:>14.6}",
            agg.method, agg.seeds, agg.mean_return, agg.mean_solve_rate, agg.ci95_solve_rate,
            agg.mean_cvar
        );
    }
    // paired tests against domain randomization when present
    if let Some(dr) = outcomes
        .iter()
        .find(|o| o.summaries.first().map(|s| s.method.as_str()) == Some("dr"))
    {
        for outcome in &outcomes {
            let name = outcome
                .summaries
                .first()
                .map(|s| s.method.clone())
                .unwrap_or_default();
            if name == "dr" || outcome.summaries.len() != dr.summaries.len() {
                continue;
            }
            let diffs: Vec<f64> = outcome
                .summaries
                .iter()
                .zip(&dr.summaries)
                .map(|(a, b)| a.eval_solve_rate - b.eval_solve_rate)
                .collect();
            match paired_one_sided_t(&diffs) {
                Ok((t, p)) => {
                    println!("{name} vs dr (solve rate, paired one-sided): t = {t:.4}, p = {p:.4}")
                }
                Err(_) => println!("{name} vs dr: not enough paired seeds for a t-test"),
            }
        }
    }
    Ok(())
}

fn classify(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ncc_core::Error>() {
        Some(ncc_core::Error::Parse { .. }) | Some(ncc_core::Error::InvalidArgument(_)) => {
            EXIT_CONFIG
        }
        Some(ncc_core::Error::NonFinite(_)) => EXIT_NUMERICAL,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval {
            policy,
            levels,
            episodes,
            gamma,
            seed,
            out,
            method,
            quiet,
        } => cmd_eval(policy, levels, *episodes, *gamma, *seed, out.as_ref(), method, *quiet),
        Command::Cvar {
            policy,
            levels,
            alphas,
            episodes,
            gamma,
            seed,
            rank_by,
            out,
            method,
        } => cmd_cvar(
            policy,
            levels,
            alphas,
            *episodes,
            *gamma,
            *seed,
            rank_by,
            out.as_ref(),
            method,
        ),
        Command::Constants(args) => cmd_constants(args),
        Command::ProjectTest {
            points,
            max_dim,
            seed,
        } => cmd_project_test(*points, *max_dim, *seed),
        Command::Compare { config, methods } => cmd_compare(config, methods),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
