//! Convergence constants and empirical verification of the guarantees.
//!
//! The closed-form constants (gradient-noise bound, smoothness, condition
//! number, two-timescale step sizes, batch size, iteration bound) are
//! evaluated from the problem dimensions. The rest of the module checks the
//! assumptions behind them on live states: policy Lipschitz/smoothness
//! probes, stationarity of the primal function `Phi(x) = max_y f(x, y)`
//! through the inner best response, first-order equilibrium residuals,
//! estimator variance against the bound, and direct curvature probes of f.

use crate::adversary::{
    adversary_gradient, best_response, entropy, project_truncated_simplex,
};
use crate::buffer::LevelBuffer;
use crate::env::{observe, rollout, sample_index, LevelKind, LevelSpec, SpaceConfig, Trajectory};
use crate::error::{Error, Result};
use crate::policy::{
    exact_expected_return, exact_policy_gradient, lipschitz_bound, mixed_probs, prob_grad,
    prob_hessian, reinforce_gradient, Baseline, ParamTable, PolicyParams,
};
use crate::rng::{stream_rng, Stream};
use crate::scoring::{optimal_return_oracle, score_learnability_general, ScoreKind};
use rand::Rng;
use rayon::prelude::*;

// ---------------------------------------------------------------------------
// Closed-form constants
// ---------------------------------------------------------------------------

/// Problem quantities the constants are evaluated from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsInputs {
    /// Buffer size N.
    pub n_levels: f64,
    /// Longest episode length T.
    pub horizon: f64,
    /// Largest absolute discounted return R*.
    pub r_star: f64,
    /// Policy Lipschitz constant L.
    pub lipschitz: f64,
    /// Policy smoothness constant K.
    pub smoothness: f64,
    /// Probability floor zeta (= zeta' / |A| for the mixed softmax family).
    pub zeta: f64,
    /// Simplex truncation floor.
    pub xi: f64,
    /// Entropy temperature.
    pub alpha: f64,
    /// Primal gap between the initial and best policies (lower bound when
    /// estimated from a finished run).
    pub delta: f64,
    /// Stationarity target epsilon.
    pub epsilon: f64,
}

/// The derived quantities, all positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsReport {
    pub inputs: ConstantsInputs,
    /// Gradient-noise bound `4 R*^2 (N + T^2 L^2 / zeta^2)`.
    pub sigma_sq: f64,
    /// Smoothness `(T R*/zeta)(T L^2 + K + L^2/zeta + 2 T L) + alpha/xi`.
    pub ell: f64,
    /// Condition number `ell / alpha`.
    pub kappa: f64,
    /// Diameter of the truncated simplex, `sqrt(2)`.
    pub diameter: f64,
    /// Slow step size `alpha^2 / ell^3`.
    pub eta_x: f64,
    /// Fast step size `1 / ell`.
    pub eta_y: f64,
    /// Batch size `max(1, sigma^2 ell / (alpha eps^2))` before rounding.
    pub batch_m_raw: f64,
    pub batch_m: u64,
    /// Iteration bound `Delta ell^3/(alpha^2 eps^2) + 2 ell^3/(alpha eps^4)`.
    pub iteration_bound: f64,
}

pub fn constants_report(inputs: &ConstantsInputs) -> Result<ConstantsReport> {
    let positives = [
        ("N", inputs.n_levels),
        ("T", inputs.horizon),
        ("R*", inputs.r_star),
        ("L", inputs.lipschitz),
        ("K", inputs.smoothness),
        ("zeta", inputs.zeta),
        ("epsilon", inputs.epsilon),
    ];
    for (name, v) in positives {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "constants need {name} > 0, got {v}"
            )));
        }
    }
    if !(inputs.alpha > 0.0) {
        return Err(Error::InvalidArgument(
            "constants undefined at alpha = 0 (no strong concavity)".to_string(),
        ));
    }
    if !(inputs.xi > 0.0) {
        return Err(Error::InvalidArgument(
            "constants undefined at xi = 0 (entropy smoothness unbounded)".to_string(),
        ));
    }
    if !(inputs.delta >= 0.0) || !inputs.delta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "constants need delta >= 0, got {}",
            inputs.delta
        )));
    }
    let ConstantsInputs {
        n_levels: n,
        horizon: t,
        r_star,
        lipschitz: l,
        smoothness: k,
        zeta,
        xi,
        alpha,
        delta,
        epsilon: eps,
    } = *inputs;

    let sigma_sq = 4.0 * r_star * r_star * (n + t * t * l * l / (zeta * zeta));
    let ell = (t * r_star / zeta) * (t * l * l + k + l * l / zeta + 2.0 * t * l) + alpha / xi;
    let kappa = ell / alpha;
    let eta_x = alpha * alpha / (ell * ell * ell);
    let eta_y = 1.0 / ell;
    let batch_m_raw = (sigma_sq * ell / (alpha * eps * eps)).max(1.0);
    let batch_m = if batch_m_raw >= u64::MAX as f64 {
        u64::MAX
    } else {
        batch_m_raw.ceil() as u64
    };
    let ell3 = ell * ell * ell;
    let iteration_bound =
        delta * ell3 / (alpha * alpha * eps * eps) + 2.0 * ell3 / (alpha * eps.powi(4));
    Ok(ConstantsReport {
        inputs: inputs.clone(),
        sigma_sq,
        ell,
        kappa,
        diameter: std::f64::consts::SQRT_2,
        eta_x,
        eta_y,
        batch_m_raw,
        batch_m,
        iteration_bound,
    })
}

impl ConstantsReport {
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let mut row = |name: &str, v: f64| {
            let _ = writeln!(out, "{name:<16} {}", crate::csvio::fmt_f64(v));
        };
        row("N", self.inputs.n_levels);
        row("T", self.inputs.horizon);
        row("R*", self.inputs.r_star);
        row("L", self.inputs.lipschitz);
        row("K", self.inputs.smoothness);
        row("zeta", self.inputs.zeta);
        row("xi", self.inputs.xi);
        row("alpha", self.inputs.alpha);
        row("delta", self.inputs.delta);
        row("epsilon", self.inputs.epsilon);
        row("sigma_sq", self.sigma_sq);
        row("ell", self.ell);
        row("kappa", self.kappa);
        row("diameter", self.diameter);
        row("eta_x", self.eta_x);
        row("eta_y", self.eta_y);
        row("batch_m", self.batch_m as f64);
        row("iteration_bound", self.iteration_bound);
        out
    }

    pub fn csv_header() -> &'static [&'static str] {
        &[
            "n", "t", "r_star", "lipschitz", "smoothness", "zeta", "xi", "alpha", "delta",
            "epsilon", "sigma_sq", "ell", "kappa", "diameter", "eta_x", "eta_y", "batch_m",
            "iteration_bound",
        ]
    }

    pub fn csv_row(&self) -> Vec<crate::csvio::Cell> {
        use crate::csvio::Cell;
        vec![
            Cell::Float(self.inputs.n_levels),
            Cell::Float(self.inputs.horizon),
            Cell::Float(self.inputs.r_star),
            Cell::Float(self.inputs.lipschitz),
            Cell::Float(self.inputs.smoothness),
            Cell::Float(self.inputs.zeta),
            Cell::Float(self.inputs.xi),
            Cell::Float(self.inputs.alpha),
            Cell::Float(self.inputs.delta),
            Cell::Float(self.inputs.epsilon),
            Cell::Float(self.sigma_sq),
            Cell::Float(self.ell),
            Cell::Float(self.kappa),
            Cell::Float(self.diameter),
            Cell::Float(self.eta_x),
            Cell::Float(self.eta_y),
            Cell::Int(self.batch_m),
            Cell::Float(self.iteration_bound),
        ]
    }
}

// ---------------------------------------------------------------------------
// Empirical policy constants
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct PolicyFamily {
    pub n_actions: usize,
    pub zeta_prime: f64,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyConstants {
    /// Largest sampled `||grad pi(a|o)||`.
    pub lipschitz_hat: f64,
    /// Largest sampled finite-difference Hessian spectral norm.
    pub smoothness_hat: f64,
    /// Smallest sampled action probability.
    pub zeta_hat: f64,
    /// Declared return bound of the space.
    pub r_star: f64,
    /// Closed-form global Lipschitz bound for the family.
    pub lipschitz_analytic: f64,
    /// Largest sampled exact-Hessian spectral norm.
    pub smoothness_analytic: f64,
}

/// Spectral norm of a small symmetric matrix by power iteration.
pub fn sym_spectral_norm(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = norm(&v);
    for x in &mut v {
        *x /= nv;
    }
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mut w = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                w[i] += m[i][j] * v[j];
            }
        }
        let wn = norm(&w);
        if wn < 1e-300 {
            return 0.0;
        }
        lambda = wn;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
    }
    lambda
}

fn fd_hessian(row: &[f64], zeta_prime: f64, action: usize, h: f64) -> Vec<Vec<f64>> {
    let n = row.len();
    let eval = |r: &[f64]| mixed_probs(r, zeta_prime)[action];
    let mut hess = vec![vec![0.0; n]; n];
    for b in 0..n {
        for c in 0..n {
            let mut p = row.to_vec();
            p[b] += h;
            p[c] += h;
            let pp = eval(&p);
            let mut p = row.to_vec();
            p[b] += h;
            p[c] -= h;
            let pm = eval(&p);
            let mut p = row.to_vec();
            p[b] -= h;
            p[c] += h;
            let mp = eval(&p);
            let mut p = row.to_vec();
            p[b] -= h;
            p[c] -= h;
            let mm = eval(&p);
            hess[b][c] = (pp - pm - mp + mm) / (4.0 * h * h);
        }
    }
    hess
}

/// Probes the policy family at random parameter draws: empirical Lipschitz
/// and smoothness constants, the observed probability floor, and the
/// analytic values they are bounded by.
pub fn measure_policy_constants<R: Rng>(
    family: &PolicyFamily,
    space: &SpaceConfig,
    samples: usize,
    rng: &mut R,
) -> PolicyConstants {
    let n = family.n_actions;
    let mut l_hat = 0.0_f64;
    let mut k_hat = 0.0_f64;
    let mut k_exact = 0.0_f64;
    let mut zeta_hat = f64::INFINITY;
    for _ in 0..samples {
        let row: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(-family.bound..family.bound))
            .collect();
        let probs = mixed_probs(&row, family.zeta_prime);
        let sigma = {
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let e: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        for a in 0..n {
            zeta_hat = zeta_hat.min(probs[a]);
            let g = prob_grad(&sigma, family.zeta_prime, a);
            l_hat = l_hat.max(g.iter().map(|x| x * x).sum::<f64>().sqrt());
            let exact = prob_hessian(&sigma, family.zeta_prime, a);
            k_exact = k_exact.max(sym_spectral_norm(&exact));
            let fd = fd_hessian(&row, family.zeta_prime, a, 1e-4);
            k_hat = k_hat.max(sym_spectral_norm(&fd));
        }
    }
    PolicyConstants {
        lipschitz_hat: l_hat,
        smoothness_hat: k_hat,
        zeta_hat,
        r_star: space.max_abs_return(),
        lipschitz_analytic: lipschitz_bound(family.zeta_prime),
        smoothness_analytic: k_exact,
    }
}

// ---------------------------------------------------------------------------
// Score and gradient evaluation backends
// ---------------------------------------------------------------------------

/// How per-level expectations are evaluated.
#[derive(Debug, Clone, Copy)]
pub enum GradMode {
    /// Closed-form / exhaustive enumeration; matrix games and short mazes.
    Exact,
    /// Monte-Carlo with `m` rollouts per level on a derived rng stream.
    MonteCarlo { m: usize, seed: u64, salt: u64 },
}

fn expected_score_exact(
    policy: &PolicyParams,
    level: &LevelSpec,
    kind: ScoreKind,
    gamma: f64,
) -> Result<f64> {
    let j = exact_expected_return(policy, level, gamma)?;
    match kind {
        ScoreKind::NegReturn => Ok(-j),
        ScoreKind::Regret => Ok(optimal_return_oracle(level, gamma)? - j),
        other => Err(Error::Unsupported(format!(
            "exact expected score not available for {}",
            other.as_str()
        ))),
    }
}

/// Per-level expected scores under the evaluation mode.
pub fn expected_scores(
    policy: &PolicyParams,
    buffer: &LevelBuffer,
    kind: ScoreKind,
    gamma: f64,
    mode: GradMode,
) -> Result<Vec<f64>> {
    match mode {
        GradMode::Exact => buffer
            .levels()
            .iter()
            .map(|level| expected_score_exact(policy, level, kind, gamma))
            .collect(),
        GradMode::MonteCarlo { m, seed, salt } => {
            if m == 0 {
                return Err(Error::InvalidArgument("MC score batch must be >= 1".to_string()));
            }
            let per_level: Vec<Vec<Trajectory>> = buffer
                .levels()
                .iter()
                .enumerate()
                .map(|(slot, level)| {
                    (0..m)
                        .map(|j| {
                            let mut rng = stream_rng(
                                seed,
                                Stream::Estimator,
                                &[salt, 1, slot as u64, j as u64],
                            );
                            rollout(policy, level, gamma, &mut rng)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            match kind {
                ScoreKind::NegReturn => per_level
                    .iter()
                    .map(|trajs| crate::scoring::score_neg_return(trajs, gamma))
                    .collect(),
                ScoreKind::Regret => per_level
                    .iter()
                    .zip(buffer.levels())
                    .map(|(trajs, level)| crate::scoring::score_regret(trajs, level, gamma))
                    .collect(),
                ScoreKind::Learnability => {
                    let returns: Vec<Vec<f64>> = per_level
                        .iter()
                        .map(|trajs| {
                            trajs
                                .iter()
                                .map(|t| crate::env::discounted_return(t, gamma))
                                .collect()
                        })
                        .collect();
                    score_learnability_general(&returns)
                }
                ScoreKind::Pvl => per_level
                    .iter()
                    .map(|trajs| {
                        let mean: f64 = trajs
                            .iter()
                            .map(|t| crate::env::discounted_return(t, gamma))
                            .sum::<f64>()
                            / trajs.len() as f64;
                        let values: Vec<Vec<f64>> =
                            trajs.iter().map(|t| vec![mean; t.len()]).collect();
                        crate::scoring::score_pvl(trajs, &values, gamma, 0.95)
                    })
                    .collect(),
            }
        }
    }
}

/// `-sum_i w_i grad_x J(level_i)`: the x-gradient of the agent objective
/// under level weights `w`. Exact via enumeration, or the policy-gradient
/// estimator averaged over `m` rollouts per level.
pub fn weighted_neg_return_gradient(
    policy: &PolicyParams,
    buffer: &LevelBuffer,
    weights: &[f64],
    gamma: f64,
    mode: GradMode,
) -> Result<ParamTable> {
    if weights.len() != buffer.len() {
        return Err(Error::Mismatch("weights do not match buffer".to_string()));
    }
    let mut total = ParamTable::new(policy.n_actions());
    match mode {
        GradMode::Exact => {
            for (level, &w) in buffer.levels().iter().zip(weights) {
                let g = exact_policy_gradient(policy, level, gamma)?;
                for (key, row) in g.rows() {
                    total.add_scaled(*key, row, -w);
                }
            }
        }
        GradMode::MonteCarlo { m, seed, salt } => {
            if m == 0 {
                return Err(Error::InvalidArgument("MC gradient batch must be >= 1".to_string()));
            }
            for (slot, (level, &w)) in buffer.levels().iter().zip(weights).enumerate() {
                let trajs: Vec<Trajectory> = (0..m)
                    .map(|j| {
                        let mut rng = stream_rng(
                            seed,
                            Stream::Estimator,
                            &[salt, 2, slot as u64, j as u64],
                        );
                        rollout(policy, level, gamma, &mut rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let batch: Vec<(&Trajectory, &LevelSpec)> =
                    trajs.iter().map(|t| (t, level)).collect();
                // the estimator already carries the negation
                let est = reinforce_gradient(policy, &batch, gamma, Baseline::ReturnToGo)?;
                for (key, row) in est.grad.rows() {
                    total.add_scaled(*key, row, w);
                }
            }
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Stationarity of Phi(x) = max_y f(x, y)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PhiReport {
    /// `||grad_x f(x, y*(x))||`; equals `||grad Phi||` by the envelope
    /// property of the unique inner maximizer.
    pub norm: f64,
    pub y_star: Vec<f64>,
    pub inner_converged: bool,
}

const BR_MAX_ITER: usize = 100_000;

pub fn phi_grad_norm(
    policy: &PolicyParams,
    buffer: &LevelBuffer,
    kind: ScoreKind,
    gamma: f64,
    alpha: f64,
    xi: f64,
    tol: f64,
    mode: GradMode,
) -> Result<PhiReport> {
    let scores = expected_scores(policy, buffer, kind, gamma, mode)?;
    let br = best_response(&scores, alpha, xi, tol, BR_MAX_ITER)?;
    let grad = weighted_neg_return_gradient(policy, buffer, &br.y, gamma, mode)?;
    Ok(PhiReport {
        norm: grad.l2_norm(),
        y_star: br.y,
        inner_converged: br.converged,
    })
}

/// `Phi(x) = max_y [y . s(x) + alpha H(y)]`, evaluated at the best response.
pub fn phi_value(
    policy: &PolicyParams,
    buffer: &LevelBuffer,
    kind: ScoreKind,
    gamma: f64,
    alpha: f64,
    xi: f64,
    tol: f64,
    mode: GradMode,
) -> Result<f64> {
    let scores = expected_scores(policy, buffer, kind, gamma, mode)?;
    let br = best_response(&scores, alpha, xi, tol, BR_MAX_ITER)?;
    crate::adversary::regularized_objective(&br.y, &scores, alpha)
}

// ---------------------------------------------------------------------------
// First-order equilibrium residual
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FoNeResidual {
    /// `||grad_x f(x, y)||`.
    pub grad_x_norm: f64,
    /// `max { <grad_y f, y' - y> : y' feasible, ||y' - y|| <= 1 }`.
    pub ascent_gap: f64,
    pub solver_converged: bool,
}

fn project_ball(v: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let dist: f64 = v
        .iter()
        .zip(center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if dist <= radius {
        return v.to_vec();
    }
    let scale = radius / dist;
    v.iter()
        .zip(center)
        .map(|(a, b)| b + (a - b) * scale)
        .collect()
}

/// Projection onto the intersection of the truncated simplex and a Euclidean
/// ball, by Dykstra's alternating scheme.
fn project_intersection(
    v: &[f64],
    center: &[f64],
    radius: f64,
    xi: f64,
    sweeps: usize,
) -> Result<Vec<f64>> {
    let n = v.len();
    let mut x = v.to_vec();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for _ in 0..sweeps {
        let prev = x.clone();
        let arg: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
        let y = project_truncated_simplex(&arg, xi)?;
        for i in 0..n {
            p[i] = arg[i] - y[i];
        }
        let arg2: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a + b).collect();
        x = project_ball(&arg2, center, radius);
        for i in 0..n {
            q[i] = arg2[i] - x[i];
        }
        let moved: f64 = x
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if moved < 1e-15 {
            break;
        }
    }
    Ok(x)
}

const ASCENT_GAP_STEPS: usize = 10_000;

/// Both displayed residuals of the first-order equilibrium condition.
///
/// The second component maximizes the linear form `<g, y' - y>` over the
/// intersection of the truncated simplex with the unit ball around `y`, by
/// projected gradient with a diminishing step and a fixed step cap.
pub fn fo_ne_residual(
    policy: &PolicyParams,
    weights: &[f64],
    buffer: &LevelBuffer,
    kind: ScoreKind,
    gamma: f64,
    alpha: f64,
    xi: f64,
    mode: GradMode,
) -> Result<FoNeResidual> {
    let grad_x = weighted_neg_return_gradient(policy, buffer, weights, gamma, mode)?;
    let scores = expected_scores(policy, buffer, kind, gamma, mode)?;
    let g = adversary_gradient(&scores, weights, alpha)?;
    let g_norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut best_gap = 0.0_f64;
    let mut y_prime = weights.to_vec();
    let mut converged = false;
    if g_norm > 0.0 {
        for k in 0..ASCENT_GAP_STEPS {
            let step = 1.0 / (g_norm * ((k + 1) as f64).sqrt());
            let moved: Vec<f64> = y_prime.iter().zip(&g).map(|(y, gi)| y + step * gi).collect();
            let next = project_intersection(&moved, weights, 1.0, xi, 200)?;
            let gap: f64 = next
                .iter()
                .zip(weights)
                .zip(&g)
                .map(|((yp, y), gi)| gi * (yp - y))
                .sum();
            best_gap = best_gap.max(gap);
            let displacement: f64 = next
                .iter()
                .zip(&y_prime)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            y_prime = next;
            if displacement < 1e-14 {
                converged = true;
                break;
            }
        }
    } else {
        converged = true;
    }
    Ok(FoNeResidual {
        grad_x_norm: grad_x.l2_norm(),
        ascent_gap: best_gap.max(0.0),
        solver_converged: converged,
    })
}

// ---------------------------------------------------------------------------
// Estimator variance against the bound
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct VarianceCheck {
    /// Empirical `E || H_hat - H ||^2` at M = 1.
    pub empirical: f64,
    /// Contribution of the policy-gradient block.
    pub empirical_grad_part: f64,
    /// Contribution of the empirical score vector.
    pub empirical_score_part: f64,
    /// The closed-form bound from the constants.
    pub sigma_sq_bound: f64,
    pub pass: bool,
    pub samples: usize,
}

/// Draws `samples` one-trajectory estimators and compares their mean squared
/// deviation from the reference gradient against the variance bound.
///
/// The reference is exact on matrix games; on mazes it is the mean over
/// `ref_m` rollouts per level.
#[allow(clippy::too_many_arguments)]
pub fn estimator_variance_check(
    policy: &PolicyParams,
    weights: &[f64],
    buffer: &LevelBuffer,
    kind: ScoreKind,
    gamma: f64,
    samples: usize,
    ref_m: usize,
    seed: u64,
) -> Result<VarianceCheck> {
    if !kind.is_zero_sum() {
        return Err(Error::Unsupported(
            "variance bound applies to the zero-sum estimators".to_string(),
        ));
    }
    if weights.len() != buffer.len() {
        return Err(Error::Mismatch("weights do not match buffer".to_string()));
    }
    let n = buffer.len();
    let exact_ok = buffer
        .levels()
        .iter()
        .all(|l| l.kind() == LevelKind::MatrixGame);
    let ref_mode = if exact_ok {
        GradMode::Exact
    } else {
        GradMode::MonteCarlo {
            m: ref_m,
            seed,
            salt: u64::MAX,
        }
    };
    let f_ref = weighted_neg_return_gradient(policy, buffer, weights, gamma, ref_mode)?;
    let s_ref = expected_scores(policy, buffer, kind, gamma, ref_mode)?;
    let optima: Vec<f64> = buffer
        .levels()
        .iter()
        .map(|l| optimal_return_oracle(l, gamma))
        .collect::<Result<_>>()?;

    let zeta_prime = policy.zeta_prime;
    let n_actions = policy.n_actions() as f64;
    let deviations: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|k| -> Result<(f64, f64)> {
            // F-hat: N levels drawn from the weights, one trajectory each
            let mut level_rng = stream_rng(seed, Stream::Estimator, &[10, k as u64]);
            let mut f_hat = ParamTable::new(policy.n_actions());
            for i in 0..n {
                let slot = sample_index(weights, &mut level_rng);
                let level = buffer.level(slot);
                let mut rng =
                    stream_rng(seed, Stream::Estimator, &[11, k as u64, i as u64]);
                let traj = rollout(policy, level, gamma, &mut rng)?;
                let batch = vec![(&traj, level)];
                let est = reinforce_gradient(policy, &batch, gamma, Baseline::ReturnToGo)?;
                for (key, row) in est.grad.rows() {
                    f_hat.add_scaled(*key, row, 1.0 / n as f64);
                }
            }
            // score part of G-hat: one trajectory per slot
            let mut s_sq = 0.0;
            for (slot, level) in buffer.levels().iter().enumerate() {
                let mut rng =
                    stream_rng(seed, Stream::Estimator, &[12, k as u64, slot as u64]);
                let traj = rollout(policy, level, gamma, &mut rng)?;
                let r = crate::env::discounted_return(&traj, gamma);
                let s_hat = match kind {
                    ScoreKind::NegReturn => -r,
                    ScoreKind::Regret => optima[slot] - r,
                    _ => unreachable!(),
                };
                let d = s_hat - s_ref[slot];
                s_sq += d * d;
            }
            Ok((f_hat.dist_sq(&f_ref), s_sq))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let empirical_grad_part = deviations.iter().map(|d| d.0).sum::<f64>() / samples as f64;
    let empirical_score_part = deviations.iter().map(|d| d.1).sum::<f64>() / samples as f64;
    let empirical = empirical_grad_part + empirical_score_part;

    let t = buffer.max_horizon() as f64;
    let r_star = buffer.max_abs_return();
    let zeta = zeta_prime / n_actions;
    let l = lipschitz_bound(zeta_prime);
    let sigma_sq = 4.0 * r_star * r_star * (n as f64 + t * t * l * l / (zeta * zeta));
    Ok(VarianceCheck {
        empirical,
        empirical_grad_part,
        empirical_score_part,
        sigma_sq_bound: sigma_sq,
        pass: empirical <= sigma_sq,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Direct curvature probe of f
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SmoothnessProbe {
    pub max_curvature: f64,
    pub ell: f64,
    pub pass: bool,
    pub directions: usize,
}

/// Max directional second difference of `f(x, y) = y . s(x) + alpha H(y)`
/// over random unit directions in the joint (x, y) space, against the
/// smoothness constant. Exact score evaluation only.
#[allow(clippy::too_many_arguments)]
pub fn smoothness_probe(
    policy: &PolicyParams,
    weights: &[f64],
    buffer: &LevelBuffer,
    kind: ScoreKind,
    gamma: f64,
    alpha: f64,
    directions: usize,
    seed: u64,
    ell: f64,
) -> Result<SmoothnessProbe> {
    if weights.len() != buffer.len() {
        return Err(Error::Mismatch("weights do not match buffer".to_string()));
    }
    // materialize the rows the probe will perturb
    let mut policy = policy.clone();
    for level in buffer.levels() {
        let key = observe(level, &crate::env::initial_state(level)).key();
        if policy.table.row(key).is_none() {
            policy.table.set_row(key, vec![0.0; policy.n_actions()]);
        }
    }
    let keys = policy.table.keys();
    let x_dim = keys.len() * policy.n_actions();
    let y_dim = weights.len();
    let dim = x_dim + y_dim;

    let eval = |xp: &PolicyParams, yp: &[f64]| -> Result<f64> {
        let mut value = if alpha == 0.0 { 0.0 } else { alpha * entropy(yp)? };
        for (level, w) in buffer.levels().iter().zip(yp) {
            value += w * expected_score_exact(xp, level, kind, gamma)?;
        }
        Ok(value)
    };

    let min_w = weights.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let mut rng = stream_rng(seed, Stream::Estimator, &[20]);
    let mut max_curv = 0.0_f64;
    for _ in 0..directions {
        let raw: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm: f64 = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let d: Vec<f64> = raw.iter().map(|x| x / norm).collect();
        let max_dy = d[x_dim..]
            .iter()
            .fold(0.0_f64, |a, &b| a.max(b.abs()))
            .max(1e-12);
        // keep the y block strictly positive at both probe points
        let h = (1e-4_f64).min(min_w / (4.0 * max_dy));
        let apply = |sign: f64| -> Result<f64> {
            let mut xp = policy.clone();
            let mut idx = 0;
            for key in &keys {
                for a in 0..policy.n_actions() {
                    *xp.table.entry_mut(*key, a) += sign * h * d[idx];
                    idx += 1;
                }
            }
            let yp: Vec<f64> = weights
                .iter()
                .zip(&d[x_dim..])
                .map(|(w, di)| w + sign * h * di)
                .collect();
            eval(&xp, &yp)
        };
        let plus = apply(1.0)?;
        let center = eval(&policy, weights)?;
        let minus = apply(-1.0)?;
        let curvature = ((plus - 2.0 * center + minus) / (h * h)).abs();
        max_curv = max_curv.max(curvature);
    }
    Ok(SmoothnessProbe {
        max_curvature: max_curv,
        ell,
        pass: max_curv <= ell * (1.0 + 1e-9),
        directions,
    })
}
