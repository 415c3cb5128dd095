//! The level-distribution player.
//!
//! The adversary is a point on the xi-truncated probability simplex over the
//! level buffer. Its objective is `y . s + alpha * H(y)` with entropy
//! `H(y) = -y . log y`; ascent steps are Euclidean-projected. The floor
//! `xi > 0` keeps the entropy Hessian `diag(-alpha/y)` bounded.

use crate::error::{Error, Result};

/// Adversary state: weights on the truncated simplex plus its two scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryDist {
    pub weights: Vec<f64>,
    /// Truncation floor: every weight stays >= xi.
    pub xi: f64,
    /// Entropy temperature.
    pub alpha: f64,
}

impl AdversaryDist {
    pub fn uniform(n: usize, xi: f64, alpha: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument("empty adversary support".to_string()));
        }
        check_floor(n, xi)?;
        let dist = Self {
            weights: vec![1.0 / n as f64; n],
            xi,
            alpha,
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        check_floor(self.weights.len(), self.xi)?;
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("adversary weights".to_string()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "adversary weights sum to {sum}, expected 1"
            )));
        }
        if self.weights.iter().any(|&w| w < self.xi - 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "adversary weight below floor {}",
                self.xi
            )));
        }
        Ok(())
    }
}

fn check_floor(n: usize, xi: f64) -> Result<()> {
    if !(xi >= 0.0) {
        return Err(Error::InvalidArgument(format!("xi must be >= 0, got {xi}")));
    }
    if xi * n as f64 > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "floor infeasible: xi * n = {} > 1",
            xi * n as f64
        )));
    }
    Ok(())
}

/// `H(y) = -sum y_i log y_i`. Every entry must be strictly positive.
pub fn entropy(y: &[f64]) -> Result<f64> {
    let mut h = 0.0;
    for &w in y {
        if !(w > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "entropy needs strictly positive weights, got {w}"
            )));
        }
        h -= w * w.ln();
    }
    Ok(h)
}

/// Ascent gradient `s + alpha * (-log y - 1)`. The `-1` is constant along the
/// simplex, so projection annihilates it; it is kept for exactness of the
/// unconstrained gradient.
pub fn adversary_gradient(score_vec: &[f64], y: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if score_vec.len() != y.len() {
        return Err(Error::Mismatch(format!(
            "score vector has {} entries, weights have {}",
            score_vec.len(),
            y.len()
        )));
    }
    if score_vec.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("score vector".to_string()));
    }
    let mut g = Vec::with_capacity(y.len());
    for (s, &w) in score_vec.iter().zip(y) {
        if alpha == 0.0 {
            g.push(*s);
        } else {
            if !(w > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "entropy gradient undefined at weight {w}"
                )));
            }
            g.push(s + alpha * (-w.ln() - 1.0));
        }
    }
    Ok(g)
}

/// Euclidean projection onto `{y : sum y = 1, y_i >= xi}`.
///
/// Shift out the floor (`z = y - xi`), project `v - xi` onto the simplex of
/// mass `1 - n*xi` by the sort-and-threshold rule, and shift back. O(n log n).
pub fn project_truncated_simplex(v: &[f64], xi: f64) -> Result<Vec<f64>> {
    let n = v.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot project empty vector".to_string()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("projection input".to_string()));
    }
    check_floor(n, xi)?;
    let mass = 1.0 - xi * n as f64;
    if mass <= 0.0 {
        // the floor uses the whole budget; the feasible set is a single point
        return Ok(vec![xi; n]);
    }
    let w: Vec<f64> = v.iter().map(|x| x - xi).collect();
    let mut sorted = w.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - mass) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    Ok(w.iter().map(|x| (x - theta).max(0.0) + xi).collect())
}

/// Reference projection by exhaustive KKT verification.
///
/// For this constraint set the optimal active set is a suffix of the
/// descending order of `v`, so all n+1 candidate active sets are enumerated
/// and checked against the full KKT system (primal feasibility of the free
/// block, dual feasibility of the floored block). Independent of the
/// production sort-and-threshold path; used by the projection battery.
pub fn projection_qp_oracle(v: &[f64], xi: f64) -> Result<Vec<f64>> {
    let n = v.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot project empty vector".to_string()));
    }
    check_floor(n, xi)?;
    let mass = 1.0 - xi * n as f64;
    if mass <= 0.0 {
        return Ok(vec![xi; n]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap());

    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 1..=n {
        // free set = k largest entries, the rest pinned at xi
        let free_sum: f64 = order[..k].iter().map(|&i| v[i] - xi).sum();
        let theta = (free_sum - mass) / k as f64;
        let mut y = vec![xi; n];
        let mut feasible = true;
        for &i in &order[..k] {
            let yi = v[i] - xi - theta;
            if yi < -1e-14 {
                feasible = false;
                break;
            }
            y[i] = yi.max(0.0) + xi;
        }
        if !feasible {
            continue;
        }
        // dual feasibility: pinned coordinates must not want to rise
        let dual_ok = order[k..].iter().all(|&i| v[i] - xi - theta <= 1e-14);
        if !dual_ok {
            continue;
        }
        let obj: f64 = y.iter().zip(v).map(|(yi, vi)| (yi - vi) * (yi - vi)).sum();
        match &best {
            Some((b, _)) if *b <= obj => {}
            _ => best = Some((obj, y)),
        }
    }
    best.map(|(_, y)| y)
        .ok_or_else(|| Error::NoConvergence("no KKT point found in projection oracle".to_string()))
}

/// `P(y + eta * grad)` onto the truncated simplex.
pub fn ascent_step_y(y: &[f64], grad: &[f64], eta_y: f64, xi: f64) -> Result<Vec<f64>> {
    if grad.len() != y.len() {
        return Err(Error::Mismatch(format!(
            "gradient has {} entries, weights have {}",
            grad.len(),
            y.len()
        )));
    }
    if !(eta_y >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ascent step size must be nonnegative, got {eta_y}"
        )));
    }
    let moved: Vec<f64> = y.iter().zip(grad).map(|(w, g)| w + eta_y * g).collect();
    project_truncated_simplex(&moved, xi)
}

/// Entropy-regularized objective `y . s + alpha * H(y)`.
pub fn regularized_objective(y: &[f64], scores: &[f64], alpha: f64) -> Result<f64> {
    if y.len() != scores.len() {
        return Err(Error::Mismatch("objective length mismatch".to_string()));
    }
    let linear: f64 = y.iter().zip(scores).map(|(w, s)| w * s).sum();
    Ok(linear + if alpha == 0.0 { 0.0 } else { alpha * entropy(y)? })
}

/// Result of the inner maximization.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub y: Vec<f64>,
    pub iterations: usize,
    /// Gradient-mapping residual `||P(y + grad) - y||_2` at the returned point.
    pub residual: f64,
    pub converged: bool,
    /// Residuals along the projected-ascent path (empty on the closed-form path).
    pub residual_history: Vec<f64>,
}

fn gradient_mapping_residual(y: &[f64], scores: &[f64], alpha: f64, xi: f64) -> Result<f64> {
    let g = adversary_gradient(scores, y, alpha)?;
    let p = ascent_step_y(y, &g, 1.0, xi)?;
    Ok(p
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Projected gradient ascent on `y . s + alpha * H(y)` from an explicit
/// starting point. The step size tracks the local curvature of the free
/// block (`alpha / min free weight`), so the iteration is monotone without
/// objective comparisons. Stops when the gradient-mapping residual reaches
/// `tol`.
pub fn projected_ascent(
    score_vec: &[f64],
    alpha: f64,
    xi: f64,
    y0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<BestResponse> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "projected ascent needs alpha > 0, got {alpha}"
        )));
    }
    let mut y = project_truncated_simplex(y0, xi)?;
    let mut history = Vec::new();
    let mut residual = gradient_mapping_residual(&y, score_vec, alpha, xi)?;
    history.push(residual);
    let mut iterations = 0;
    while residual > tol && iterations < max_iter {
        let g = adversary_gradient(score_vec, &y, alpha)?;
        // curvature on the feasible segment is at most alpha / min(y), so
        // eta = min(y) / alpha keeps the iteration monotone
        let min_w = y.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let eta = min_w / alpha;
        y = ascent_step_y(&y, &g, eta, xi)?;
        residual = gradient_mapping_residual(&y, score_vec, alpha, xi)?;
        history.push(residual);
        iterations += 1;
    }
    Ok(BestResponse {
        converged: residual <= tol,
        y,
        iterations,
        residual,
        residual_history: history,
    })
}

/// Exact candidate for the floored maximizer: free coordinates follow
/// `c * exp(s_i / alpha)`, the rest sit at the floor. The free set must be a
/// prefix of the descending score order, so all n candidates are checked
/// against the KKT conditions.
fn floored_softmax_candidate(score_vec: &[f64], alpha: f64, xi: f64) -> Option<Vec<f64>> {
    let n = score_vec.len();
    let max_s = score_vec.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = score_vec.iter().map(|s| ((s - max_s) / alpha).exp()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| e[b].partial_cmp(&e[a]).unwrap());
    for k in (1..=n).rev() {
        let free_mass = 1.0 - (n - k) as f64 * xi;
        if free_mass <= 0.0 {
            continue;
        }
        let z: f64 = order[..k].iter().map(|&i| e[i]).sum();
        let c = free_mass / z;
        let mut y = vec![xi; n];
        let mut ok = true;
        for &i in &order[..k] {
            let w = c * e[i];
            if w < xi - 1e-15 {
                ok = false;
                break;
            }
            y[i] = w;
        }
        if !ok {
            continue;
        }
        // pinned coordinates must not want to rise above the floor
        if order[k..].iter().all(|&i| c * e[i] <= xi + 1e-15) {
            return Some(y);
        }
    }
    None
}

/// Maximizer of `y . s + alpha * H(y)` over the truncated simplex.
///
/// The unconstrained maximizer is `softmax(s / alpha)`; when it clears the
/// floor it is returned directly. Otherwise the floored stationary point is
/// solved on the active set and verified against the gradient-mapping
/// residual, with [`projected_ascent`] as the fallback.
pub fn best_response(
    score_vec: &[f64],
    alpha: f64,
    xi: f64,
    tol: f64,
    max_iter: usize,
) -> Result<BestResponse> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "best response needs alpha > 0, got {alpha}"
        )));
    }
    if score_vec.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("score vector".to_string()));
    }
    check_floor(score_vec.len(), xi)?;

    let max_s = score_vec.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = score_vec.iter().map(|s| ((s - max_s) / alpha).exp()).collect();
    let z: f64 = exps.iter().sum();
    let closed: Vec<f64> = exps.iter().map(|e| e / z).collect();
    if closed.iter().all(|&w| w >= xi) {
        let residual = gradient_mapping_residual(&closed, score_vec, alpha, xi)?;
        return Ok(BestResponse {
            y: closed,
            iterations: 0,
            residual,
            converged: true,
            residual_history: Vec::new(),
        });
    }
    if let Some(candidate) = floored_softmax_candidate(score_vec, alpha, xi) {
        let residual = gradient_mapping_residual(&candidate, score_vec, alpha, xi)?;
        if residual <= tol {
            return Ok(BestResponse {
                y: candidate,
                iterations: 0,
                residual,
                converged: true,
                residual_history: Vec::new(),
            });
        }
    }
    projected_ascent(score_vec, alpha, xi, &closed, tol, max_iter)
}

// ---------------------------------------------------------------------------
// Checkpoint format: length, xi, alpha, then one weight per line.
// ---------------------------------------------------------------------------

pub fn adversary_to_string(dist: &AdversaryDist) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "{}", dist.len());
    let _ = writeln!(out, "{}", crate::csvio::fmt_f64(dist.xi));
    let _ = writeln!(out, "{}", crate::csvio::fmt_f64(dist.alpha));
    for w in &dist.weights {
        let _ = writeln!(out, "{}", crate::csvio::fmt_f64(*w));
    }
    out
}

pub fn adversary_from_string(text: &str) -> Result<AdversaryDist> {
    let mut lines = text.lines().enumerate();
    let mut next_f64 = |what: &str| -> Result<f64> {
        let (i, line) = lines.next().ok_or(Error::Parse {
            line: 0,
            message: format!("missing {what}"),
        })?;
        line.trim().parse::<f64>().map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad {what}: {e}"),
        })
    };
    let n = next_f64("length")? as usize;
    let xi = next_f64("xi")?;
    let alpha = next_f64("alpha")?;
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        weights.push(next_f64("weight")?);
    }
    let dist = AdversaryDist { weights, xi, alpha };
    dist.validate()?;
    Ok(dist)
}
