//! Tabular softmax policy with a uniform exploration floor.
//!
//! The policy keeps one logit row per observation key and acts through
//! `pi = (1 - zeta') * softmax(row) + zeta' * uniform`, so every action
//! probability is at least `zeta'/|A|` and log-probability gradients stay
//! bounded. Rows materialize lazily; an unseen observation acts uniformly.
//!
//! Alongside the sampled REINFORCE estimator there is an exact gradient by
//! exhaustive trajectory enumeration, feasible for matrix games and short
//! mazes, which anchors the estimator tests.

use crate::env::{ActionPolicy, LevelKind, LevelSpec, Observation, ObsKey, State, Trajectory};
use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// A real table shaped like the policy parameters: one row of `n_actions`
/// entries per observation key, missing rows meaning zero. Ordered keys keep
/// every reduction and checkpoint deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamTable {
    rows: BTreeMap<ObsKey, Vec<f64>>,
    n_actions: usize,
}

impl ParamTable {
    pub fn new(n_actions: usize) -> Self {
        Self {
            rows: BTreeMap::new(),
            n_actions,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, key: ObsKey) -> Option<&[f64]> {
        self.rows.get(&key).map(|r| r.as_slice())
    }

    pub fn rows(&self) -> impl Iterator<Item = (&ObsKey, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn keys(&self) -> Vec<ObsKey> {
        self.rows.keys().copied().collect()
    }

    /// Adds `scale * v` into the row at `key`, materializing it if needed.
    pub fn add_scaled(&mut self, key: ObsKey, v: &[f64], scale: f64) {
        debug_assert_eq!(v.len(), self.n_actions);
        let row = self
            .rows
            .entry(key)
            .or_insert_with(|| vec![0.0; self.n_actions]);
        for (r, x) in row.iter_mut().zip(v) {
            *r += scale * x;
        }
    }

    pub fn set_row(&mut self, key: ObsKey, v: Vec<f64>) {
        debug_assert_eq!(v.len(), self.n_actions);
        self.rows.insert(key, v);
    }

    pub fn entry_mut(&mut self, key: ObsKey, action: usize) -> &mut f64 {
        let row = self
            .rows
            .entry(key)
            .or_insert_with(|| vec![0.0; self.n_actions]);
        &mut row[action]
    }

    pub fn l2_norm(&self) -> f64 {
        self.rows
            .values()
            .flat_map(|r| r.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().all(|r| r.iter().all(|x| x.is_finite()))
    }

    /// Squared L2 distance, treating missing rows as zero.
    pub fn dist_sq(&self, other: &ParamTable) -> f64 {
        let mut acc = 0.0;
        let zeros = vec![0.0; self.n_actions];
        let mut keys: Vec<ObsKey> = self.rows.keys().chain(other.rows.keys()).copied().collect();
        keys.sort_unstable();
        keys.dedup();
        for key in keys {
            let a = self.rows.get(&key).map(|r| r.as_slice()).unwrap_or(&zeros);
            let b = other.rows.get(&key).map(|r| r.as_slice()).unwrap_or(&zeros);
            for i in 0..self.n_actions {
                let d = a[i] - b[i];
                acc += d * d;
            }
        }
        acc
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// `pi = (1 - zeta') * softmax(row) + zeta' / n`.
pub fn mixed_probs(row: &[f64], zeta_prime: f64) -> Vec<f64> {
    let n = row.len();
    let sm = softmax(row);
    sm.iter()
        .map(|s| (1.0 - zeta_prime) * s + zeta_prime / n as f64)
        .collect()
}

/// Gradient of `pi(a|o)` with respect to the row logits:
/// `(1 - zeta') * sigma_a * (e_a - sigma)`.
pub fn prob_grad(sigma: &[f64], zeta_prime: f64, action: usize) -> Vec<f64> {
    sigma
        .iter()
        .enumerate()
        .map(|(b, s)| {
            let delta = if b == action { 1.0 } else { 0.0 };
            (1.0 - zeta_prime) * sigma[action] * (delta - s)
        })
        .collect()
}

/// Hessian of `pi(a|o)` with respect to the row logits:
/// `(1 - zeta') * sigma_a * ((e_a - sigma)(e_a - sigma)^T - diag(sigma) + sigma sigma^T)`.
pub fn prob_hessian(sigma: &[f64], zeta_prime: f64, action: usize) -> Vec<Vec<f64>> {
    let n = sigma.len();
    let mut h = vec![vec![0.0; n]; n];
    for b in 0..n {
        for c in 0..n {
            let db = if b == action { 1.0 } else { 0.0 };
            let dc = if c == action { 1.0 } else { 0.0 };
            let dbc = if b == c { 1.0 } else { 0.0 };
            h[b][c] = (1.0 - zeta_prime)
                * sigma[action]
                * ((db - sigma[b]) * (dc - sigma[c]) - sigma[b] * dbc + sigma[b] * sigma[c]);
        }
    }
    h
}

/// Global bound on `||grad pi(a|o)||` for the mixed softmax family.
pub fn lipschitz_bound(zeta_prime: f64) -> f64 {
    (1.0 - zeta_prime) * std::f64::consts::SQRT_2 / 4.0
}

/// Policy parameters: the logit table, the exploration floor weight, and the
/// box radius the weights are clipped to.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub table: ParamTable,
    /// Uniform mixing weight in (0, 1]; the per-action floor is `zeta'/|A|`.
    pub zeta_prime: f64,
    /// Hard clip radius for every logit.
    pub bound: f64,
}

impl PolicyParams {
    pub fn new(n_actions: usize, zeta_prime: f64, bound: f64) -> Result<Self> {
        if n_actions < 2 {
            return Err(Error::InvalidArgument(format!(
                "policy needs >= 2 actions, got {n_actions}"
            )));
        }
        if !(zeta_prime > 0.0 && zeta_prime <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "zeta' must lie in (0, 1], got {zeta_prime}"
            )));
        }
        if !(bound > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight bound must be positive, got {bound}"
            )));
        }
        Ok(Self {
            table: ParamTable::new(n_actions),
            zeta_prime,
            bound,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.table.n_actions()
    }

    /// Per-action probability floor `zeta'/|A|`.
    pub fn prob_floor(&self) -> f64 {
        self.zeta_prime / self.n_actions() as f64
    }

    fn row_probs(&self, key: ObsKey) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_actions();
        match self.table.row(key) {
            Some(row) => {
                let sigma = softmax(row);
                let probs = sigma
                    .iter()
                    .map(|s| (1.0 - self.zeta_prime) * s + self.zeta_prime / n as f64)
                    .collect();
                (sigma, probs)
            }
            None => (vec![1.0 / n as f64; n], vec![1.0 / n as f64; n]),
        }
    }
}

impl ActionPolicy for PolicyParams {
    fn action_probs(&self, obs: &Observation, n_actions: usize) -> Vec<f64> {
        debug_assert_eq!(n_actions, self.n_actions());
        action_distribution(self, obs)
    }
}

/// The mixed action distribution at one observation.
pub fn action_distribution(params: &PolicyParams, obs: &Observation) -> Vec<f64> {
    params.row_probs(obs.key()).1
}

/// Baseline used in the policy-gradient estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// `Psi^t = gamma^t * (discounted return from t onward)`.
    ReturnToGo,
    /// Return-to-go minus the leave-one-out mean return of the other
    /// trajectories on the same level; a critic-free advantage.
    LeaveOneOutAdvantage,
}

#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub grad: ParamTable,
    pub batch_size: usize,
    pub baseline: Baseline,
}

/// Sampled gradient of the *negated* expected return: averages
/// `-(1/batch) * sum_t grad log pi(a_t|o_t) * Psi^t` over the batch.
pub fn reinforce_gradient(
    params: &PolicyParams,
    batch: &[(&Trajectory, &LevelSpec)],
    gamma: f64,
    baseline: Baseline,
) -> Result<GradientEstimate> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty gradient batch".to_string()));
    }
    for (traj, level) in batch {
        if traj.level_id != level.id {
            return Err(Error::Mismatch(format!(
                "trajectory from level {} paired with level {}",
                traj.level_id, level.id
            )));
        }
    }

    // leave-one-out mean return per batch entry, grouped by level id
    let loo: Vec<f64> = match baseline {
        Baseline::ReturnToGo => vec![0.0; batch.len()],
        Baseline::LeaveOneOutAdvantage => {
            let returns: Vec<f64> = batch
                .iter()
                .map(|(t, _)| crate::env::discounted_return(t, gamma))
                .collect();
            let mut sums: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
            for ((_, level), r) in batch.iter().zip(&returns) {
                let e = sums.entry(level.id).or_insert((0.0, 0));
                e.0 += r;
                e.1 += 1;
            }
            batch
                .iter()
                .zip(&returns)
                .map(|((_, level), r)| {
                    let (sum, count) = sums[&level.id];
                    if count > 1 {
                        (sum - r) / (count - 1) as f64
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    };

    let mut grad = ParamTable::new(params.n_actions());
    let scale = -1.0 / batch.len() as f64;
    for ((traj, _), baseline_value) in batch.iter().zip(&loo) {
        // recompute return-to-go at the requested gamma
        let mut rtg = vec![0.0; traj.len()];
        let mut acc = 0.0;
        for t in (0..traj.len()).rev() {
            acc = traj.steps[t].reward + gamma * acc;
            rtg[t] = acc;
        }
        let mut discount = 1.0;
        for (t, step) in traj.steps.iter().enumerate() {
            let psi = discount * (rtg[t] - baseline_value);
            if psi != 0.0 {
                let key = step.obs.key();
                let (sigma, probs) = params.row_probs(key);
                let g = prob_grad(&sigma, params.zeta_prime, step.action);
                let logp_grad: Vec<f64> = g.iter().map(|x| x / probs[step.action]).collect();
                grad.add_scaled(key, &logp_grad, scale * psi);
            }
            discount *= gamma;
        }
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("policy gradient estimate".to_string()));
    }
    Ok(GradientEstimate {
        grad,
        batch_size: batch.len(),
        baseline,
    })
}

const ENUM_PATH_CAP: usize = 1 << 16;

fn enumeration_supported(level: &LevelSpec) -> Result<()> {
    match level.kind() {
        LevelKind::MatrixGame => Ok(()),
        LevelKind::GridMaze => {
            if level.horizon <= 6 && level.n_actions() <= 4 {
                Ok(())
            } else {
                Err(Error::Unsupported(format!(
                    "exact enumeration needs horizon <= 6 and <= 4 actions, level has T={} A={}",
                    level.horizon,
                    level.n_actions()
                )))
            }
        }
    }
}

struct EnumAcc {
    expected_return: f64,
    grad: ParamTable,
}

fn enumerate_paths(
    params: &PolicyParams,
    level: &LevelSpec,
    gamma: f64,
    state: State,
    t: usize,
    prob: f64,
    reward_acc: f64,
    logp_path: &mut Vec<(ObsKey, Vec<f64>)>,
    acc: &mut EnumAcc,
    paths: &mut usize,
) -> Result<()> {
    if t == level.horizon {
        finish_path(prob, reward_acc, logp_path, acc, paths)?;
        return Ok(());
    }
    let obs = crate::env::observe(level, &state);
    let key = obs.key();
    let (sigma, probs) = params.row_probs(key);
    for action in 0..level.n_actions() {
        let p = probs[action];
        let g = prob_grad(&sigma, params.zeta_prime, action);
        let logp_grad: Vec<f64> = g.iter().map(|x| x / p).collect();
        logp_path.push((key, logp_grad));
        let (next, reward, done) = crate::env::step(level, &state, action)?;
        let reward_next = reward_acc + gamma.powi(t as i32) * reward;
        if done {
            finish_path(prob * p, reward_next, logp_path, acc, paths)?;
        } else {
            enumerate_paths(
                params,
                level,
                gamma,
                next,
                t + 1,
                prob * p,
                reward_next,
                logp_path,
                acc,
                paths,
            )?;
        }
        logp_path.pop();
    }
    Ok(())
}

fn finish_path(
    prob: f64,
    ret: f64,
    logp_path: &[(ObsKey, Vec<f64>)],
    acc: &mut EnumAcc,
    paths: &mut usize,
) -> Result<()> {
    *paths += 1;
    if *paths > ENUM_PATH_CAP {
        return Err(Error::Unsupported(format!(
            "trajectory enumeration exceeded {ENUM_PATH_CAP} paths"
        )));
    }
    acc.expected_return += prob * ret;
    let w = prob * ret;
    if w != 0.0 {
        for (key, g) in logp_path {
            acc.grad.add_scaled(*key, g, w);
        }
    }
    Ok(())
}

/// `E[R]` under the policy by exhaustive trajectory enumeration.
pub fn exact_expected_return(params: &PolicyParams, level: &LevelSpec, gamma: f64) -> Result<f64> {
    enumeration_supported(level)?;
    let mut acc = EnumAcc {
        expected_return: 0.0,
        grad: ParamTable::new(params.n_actions()),
    };
    let mut paths = 0;
    enumerate_paths(
        params,
        level,
        gamma,
        crate::env::initial_state(level),
        0,
        1.0,
        0.0,
        &mut Vec::new(),
        &mut acc,
        &mut paths,
    )?;
    Ok(acc.expected_return)
}

/// `grad_x E[R]` (the *positive* return gradient) by exhaustive enumeration:
/// `sum_tau p(tau) R(tau) sum_t grad log pi(a_t|o_t)`.
pub fn exact_policy_gradient(
    params: &PolicyParams,
    level: &LevelSpec,
    gamma: f64,
) -> Result<ParamTable> {
    enumeration_supported(level)?;
    let mut acc = EnumAcc {
        expected_return: 0.0,
        grad: ParamTable::new(params.n_actions()),
    };
    let mut paths = 0;
    enumerate_paths(
        params,
        level,
        gamma,
        crate::env::initial_state(level),
        0,
        1.0,
        0.0,
        &mut Vec::new(),
        &mut acc,
        &mut paths,
    )?;
    Ok(acc.grad)
}

/// One clipped SGD step: `x <- clip(x - eta * grad, +-bound)`.
pub fn sgd_step_x(params: &PolicyParams, grad: &ParamTable, eta_x: f64) -> Result<PolicyParams> {
    if !(eta_x >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must be nonnegative, got {eta_x}"
        )));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient passed to sgd_step_x".to_string()));
    }
    let mut next = params.clone();
    for (key, g) in grad.rows() {
        let row = next
            .table
            .rows
            .entry(*key)
            .or_insert_with(|| vec![0.0; grad.n_actions()]);
        for (x, gi) in row.iter_mut().zip(g) {
            *x = (*x - eta_x * gi).clamp(-params.bound, params.bound);
        }
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// Checkpoint format:
//   policy-checkpoint v1
//   actions <A>
//   zeta_prime <z>
//   bound <B>
//   rows <n>
//   <key as 16 hex digits> <logit> ... <logit>
// ---------------------------------------------------------------------------

pub fn policy_to_string(params: &PolicyParams) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "policy-checkpoint v1");
    let _ = writeln!(out, "actions {}", params.n_actions());
    let _ = writeln!(out, "zeta_prime {}", crate::csvio::fmt_f64(params.zeta_prime));
    let _ = writeln!(out, "bound {}", crate::csvio::fmt_f64(params.bound));
    let _ = writeln!(out, "rows {}", params.table.n_rows());
    for (key, row) in params.table.rows() {
        let vals: Vec<String> = row.iter().map(|v| crate::csvio::fmt_f64(*v)).collect();
        let _ = writeln!(out, "{key:016x} {}", vals.join(" "));
    }
    out
}

pub fn policy_from_string(text: &str) -> Result<PolicyParams> {
    let mut lines = text.lines().enumerate();
    let mut expect = |prefix: &str| -> Result<(usize, String)> {
        let (i, line) = lines
            .next()
            .ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing '{prefix}' line"),
            })?;
        let rest = line.strip_prefix(prefix).ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected line starting with '{prefix}', got '{line}'"),
        })?;
        Ok((i + 1, rest.trim().to_string()))
    };
    expect("policy-checkpoint v1")?;
    let (l, actions) = expect("actions ")?;
    let n_actions: usize = actions.parse().map_err(|e| Error::Parse {
        line: l,
        message: format!("bad action count: {e}"),
    })?;
    let (l, z) = expect("zeta_prime ")?;
    let zeta_prime: f64 = z.parse().map_err(|e| Error::Parse {
        line: l,
        message: format!("bad zeta': {e}"),
    })?;
    let (l, b) = expect("bound ")?;
    let bound: f64 = b.parse().map_err(|e| Error::Parse {
        line: l,
        message: format!("bad bound: {e}"),
    })?;
    let (l, n) = expect("rows ")?;
    let n_rows: usize = n.parse().map_err(|e| Error::Parse {
        line: l,
        message: format!("bad row count: {e}"),
    })?;
    let mut params = PolicyParams::new(n_actions, zeta_prime, bound)?;
    for _ in 0..n_rows {
        let (i, line) = lines.next().ok_or(Error::Parse {
            line: l,
            message: "fewer rows than declared".to_string(),
        })?;
        let mut toks = line.split_whitespace();
        let key_tok = toks.next().ok_or(Error::Parse {
            line: i + 1,
            message: "empty row line".to_string(),
        })?;
        let key = u64::from_str_radix(key_tok, 16).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad key: {e}"),
        })?;
        let row: Vec<f64> = toks
            .map(|t| {
                t.parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("bad logit '{t}': {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != n_actions {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("row has {} logits, expected {n_actions}", row.len()),
            });
        }
        params.table.set_row(key, row);
    }
    Ok(params)
}

pub fn save_policy(params: &PolicyParams, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, policy_to_string(params))?;
    Ok(())
}

pub fn load_policy(path: &std::path::Path) -> Result<PolicyParams> {
    policy_from_string(&std::fs::read_to_string(path)?)
}
