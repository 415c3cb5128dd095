//! Underspecified-environment core: levels, transitions, rollouts.
//!
//! A *level* is one parametrization of the environment family. Two families
//! are implemented: a deterministic grid maze with a sparse goal reward, and
//! a one-step matrix game whose level is a payoff column. The maze exercises
//! the full trajectory machinery; the matrix game keeps every expectation
//! computable in closed form.

mod grid;

pub use grid::{bfs_distance, GridLevel};

use crate::error::{Error, Result};
use rand::Rng;

/// Grid actions, in the fixed order used everywhere.
pub const GRID_ACTIONS: usize = 4;
const GRID_DELTAS: [(i64, i64); GRID_ACTIONS] = [(0, -1), (0, 1), (-1, 0), (1, 0)]; // up, down, left, right

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelKind {
    GridMaze,
    MatrixGame,
}

impl LevelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LevelKind::GridMaze => "grid",
            LevelKind::MatrixGame => "matrix",
        }
    }
}

/// A one-step game: the level is a payoff column, one entry per action.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixLevel {
    pub payoffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LevelPayload {
    Grid(GridLevel),
    Matrix(MatrixLevel),
}

/// One environment parametrization plus its episode horizon.
///
/// The id is a stable hash of the contents, so identical levels built
/// anywhere compare equal and buffers can deduplicate by id.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSpec {
    pub id: u64,
    pub payload: LevelPayload,
    pub horizon: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn level_id(payload: &LevelPayload, horizon: usize) -> u64 {
    let mut bytes = Vec::new();
    match payload {
        LevelPayload::Grid(g) => {
            bytes.push(1);
            bytes.extend_from_slice(&(g.width as u64).to_le_bytes());
            bytes.extend_from_slice(&(g.height as u64).to_le_bytes());
            for &w in &g.walls {
                bytes.push(w as u8);
            }
            bytes.extend_from_slice(&(g.start.0 as u64).to_le_bytes());
            bytes.extend_from_slice(&(g.start.1 as u64).to_le_bytes());
            bytes.extend_from_slice(&(g.goal.0 as u64).to_le_bytes());
            bytes.extend_from_slice(&(g.goal.1 as u64).to_le_bytes());
        }
        LevelPayload::Matrix(m) => {
            bytes.push(2);
            for &p in &m.payoffs {
                bytes.extend_from_slice(&p.to_bits().to_le_bytes());
            }
        }
    }
    bytes.extend_from_slice(&(horizon as u64).to_le_bytes());
    fnv1a(&bytes)
}

/// Builds a validated grid level. The horizon defaults to `2 * width * height`,
/// enough for any solvable maze.
pub fn make_grid_level(
    width: usize,
    height: usize,
    walls: Vec<bool>,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<LevelSpec> {
    make_grid_level_with_horizon(width, height, walls, start, goal, 2 * width * height)
}

pub fn make_grid_level_with_horizon(
    width: usize,
    height: usize,
    walls: Vec<bool>,
    start: (usize, usize),
    goal: (usize, usize),
    horizon: usize,
) -> Result<LevelSpec> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidLevel(format!(
            "grid must be at least 2x2, got {width}x{height}"
        )));
    }
    if walls.len() != width * height {
        return Err(Error::InvalidLevel(format!(
            "wall mask has {} cells, expected {}",
            walls.len(),
            width * height
        )));
    }
    let in_bounds = |(x, y): (usize, usize)| x < width && y < height;
    if !in_bounds(start) || !in_bounds(goal) {
        return Err(Error::InvalidLevel(format!(
            "start {start:?} or goal {goal:?} out of bounds for {width}x{height}"
        )));
    }
    if start == goal {
        return Err(Error::InvalidLevel("start and goal coincide".to_string()));
    }
    let cell = |(x, y): (usize, usize)| y * width + x;
    if walls[cell(start)] {
        return Err(Error::InvalidLevel(format!("start {start:?} is a wall")));
    }
    if walls[cell(goal)] {
        return Err(Error::InvalidLevel(format!("goal {goal:?} is a wall")));
    }
    if horizon == 0 {
        return Err(Error::InvalidLevel("horizon must be >= 1".to_string()));
    }
    let payload = LevelPayload::Grid(GridLevel {
        width,
        height,
        walls,
        start,
        goal,
    });
    let id = level_id(&payload, horizon);
    Ok(LevelSpec {
        id,
        payload,
        horizon,
    })
}

/// Builds a one-step matrix-game level from its payoff column.
pub fn make_matrix_level(payoffs: Vec<f64>) -> Result<LevelSpec> {
    if payoffs.len() < 2 {
        return Err(Error::InvalidLevel(format!(
            "matrix level needs >= 2 actions, got {}",
            payoffs.len()
        )));
    }
    if payoffs.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidLevel("payoff entries must be finite".to_string()));
    }
    let payload = LevelPayload::Matrix(MatrixLevel { payoffs });
    let id = level_id(&payload, 1);
    Ok(LevelSpec {
        id,
        payload,
        horizon: 1,
    })
}

impl LevelSpec {
    pub fn kind(&self) -> LevelKind {
        match &self.payload {
            LevelPayload::Grid(_) => LevelKind::GridMaze,
            LevelPayload::Matrix(_) => LevelKind::MatrixGame,
        }
    }

    pub fn n_actions(&self) -> usize {
        match &self.payload {
            LevelPayload::Grid(_) => GRID_ACTIONS,
            LevelPayload::Matrix(m) => m.payoffs.len(),
        }
    }

    /// Largest absolute discounted return any trajectory on this level can have.
    pub fn max_abs_return(&self) -> f64 {
        match &self.payload {
            // Single terminal reward of 1, discounted by at most gamma^0.
            LevelPayload::Grid(_) => 1.0,
            LevelPayload::Matrix(m) => m.payoffs.iter().fold(0.0_f64, |a, p| a.max(p.abs())),
        }
    }

    pub fn grid(&self) -> Option<&GridLevel> {
        match &self.payload {
            LevelPayload::Grid(g) => Some(g),
            _ => None,
        }
    }

    pub fn matrix(&self) -> Option<&MatrixLevel> {
        match &self.payload {
            LevelPayload::Matrix(m) => Some(m),
            _ => None,
        }
    }
}

/// Environment state. Grid states are agent positions; the matrix game has a
/// single pre-action state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum State {
    Grid { x: usize, y: usize },
    Matrix,
}

pub fn initial_state(level: &LevelSpec) -> State {
    match &level.payload {
        LevelPayload::Grid(g) => State::Grid {
            x: g.start.0,
            y: g.start.1,
        },
        LevelPayload::Matrix(_) => State::Matrix,
    }
}

/// What the policy sees. Grid observations are an egocentric 3x3 wall/goal
/// window plus the agent position (normalized coordinates are derived from
/// it); the matrix game is stateless.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Grid {
        /// 3x3 window, row-major over (dy, dx) in {-1,0,1}^2; bit set = wall or out of bounds.
        walls3: u16,
        /// 3x3 window; bit set = goal cell.
        goals3: u16,
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    Matrix,
}

pub type ObsKey = u64;

impl Observation {
    /// Stable table key. Grid keys carry a tag bit so they can never collide
    /// with the matrix key.
    pub fn key(&self) -> ObsKey {
        match *self {
            Observation::Grid {
                walls3,
                goals3,
                x,
                y,
                ..
            } => {
                (1 << 63)
                    | (walls3 as u64)
                    | ((goals3 as u64) << 9)
                    | ((x as u64 & 0xff) << 18)
                    | ((y as u64 & 0xff) << 26)
            }
            Observation::Matrix => 0,
        }
    }

    /// Dense feature view: 9 wall flags, 9 goal flags, 2 normalized coordinates.
    pub fn features(&self) -> Vec<f64> {
        match *self {
            Observation::Grid {
                walls3,
                goals3,
                x,
                y,
                width,
                height,
            } => {
                let mut f = Vec::with_capacity(20);
                for i in 0..9 {
                    f.push(((walls3 >> i) & 1) as f64);
                }
                for i in 0..9 {
                    f.push(((goals3 >> i) & 1) as f64);
                }
                f.push(x as f64 / (width - 1).max(1) as f64);
                f.push(y as f64 / (height - 1).max(1) as f64);
                f
            }
            Observation::Matrix => vec![1.0],
        }
    }
}

pub fn observe(level: &LevelSpec, state: &State) -> Observation {
    match (&level.payload, state) {
        (LevelPayload::Grid(g), State::Grid { x, y }) => {
            let mut walls3 = 0u16;
            let mut goals3 = 0u16;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let idx = ((dy + 1) * 3 + (dx + 1)) as u16;
                    let cx = *x as i64 + dx;
                    let cy = *y as i64 + dy;
                    let blocked = cx < 0
                        || cy < 0
                        || cx >= g.width as i64
                        || cy >= g.height as i64
                        || g.walls[cy as usize * g.width + cx as usize];
                    if blocked {
                        walls3 |= 1 << idx;
                    }
                    if cx == g.goal.0 as i64 && cy == g.goal.1 as i64 {
                        goals3 |= 1 << idx;
                    }
                }
            }
            Observation::Grid {
                walls3,
                goals3,
                x: *x,
                y: *y,
                width: g.width,
                height: g.height,
            }
        }
        (LevelPayload::Matrix(_), State::Matrix) => Observation::Matrix,
        _ => unreachable!("state kind does not match level kind"),
    }
}

/// One deterministic transition.
///
/// Grid: a move into a wall or out of bounds leaves the state unchanged;
/// reward is 1 exactly on arrival at the goal, which also terminates.
/// Matrix: the single step pays `payoffs[action]` and terminates.
pub fn step(level: &LevelSpec, state: &State, action: usize) -> Result<(State, f64, bool)> {
    if action >= level.n_actions() {
        return Err(Error::InvalidArgument(format!(
            "action {action} out of range (level has {} actions)",
            level.n_actions()
        )));
    }
    match (&level.payload, state) {
        (LevelPayload::Grid(g), State::Grid { x, y }) => {
            if *x >= g.width || *y >= g.height || g.walls[y * g.width + x] {
                return Err(Error::InvalidArgument(format!(
                    "state ({x},{y}) not reachable on this level"
                )));
            }
            let (dx, dy) = GRID_DELTAS[action];
            let nx = *x as i64 + dx;
            let ny = *y as i64 + dy;
            let blocked = nx < 0
                || ny < 0
                || nx >= g.width as i64
                || ny >= g.height as i64
                || g.walls[ny as usize * g.width + nx as usize];
            let next = if blocked {
                State::Grid { x: *x, y: *y }
            } else {
                State::Grid {
                    x: nx as usize,
                    y: ny as usize,
                }
            };
            let arrived = matches!(next, State::Grid { x, y } if (x, y) == g.goal);
            let reward = if arrived { 1.0 } else { 0.0 };
            Ok((next, reward, arrived))
        }
        (LevelPayload::Matrix(m), State::Matrix) => Ok((State::Matrix, m.payoffs[action], true)),
        _ => Err(Error::Mismatch("state kind does not match level kind".to_string())),
    }
}

/// Anything that can act: the trained policy, scripted test policies,
/// and baseline heuristics all come through here.
pub trait ActionPolicy {
    /// Probability over the level's actions; must sum to 1.
    fn action_probs(&self, obs: &Observation, n_actions: usize) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct TrajStep {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
}

/// A sampled episode together with its discounted return-to-go cache:
/// `return_to_go[t] = reward[t] + gamma * return_to_go[t+1]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub level_id: u64,
    pub steps: Vec<TrajStep>,
    /// True when the episode ended in a terminal transition rather than the
    /// horizon cutoff.
    pub terminal: bool,
    pub gamma: f64,
    pub return_to_go: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Discounted return at the cached gamma.
    pub fn ret(&self) -> f64 {
        self.return_to_go.first().copied().unwrap_or(0.0)
    }

    /// Goal reached (grid) or episode completed (matrix).
    pub fn solved(&self) -> bool {
        match self.steps.first().map(|s| s.obs) {
            Some(Observation::Matrix) => self.terminal,
            _ => self.terminal && self.steps.last().is_some_and(|s| s.reward > 0.0),
        }
    }
}

pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// Samples one episode of at most `level.horizon` steps. The rng fully
/// determines the result given (policy, level, gamma).
pub fn rollout<P: ActionPolicy + ?Sized, R: Rng>(
    policy: &P,
    level: &LevelSpec,
    gamma: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    let n_actions = level.n_actions();
    let mut state = initial_state(level);
    let mut steps = Vec::new();
    let mut terminal = false;
    for _ in 0..level.horizon {
        let obs = observe(level, &state);
        let probs = policy.action_probs(&obs, n_actions);
        let action = sample_index(&probs, rng);
        let (next, reward, done) = step(level, &state, action)?;
        steps.push(TrajStep {
            obs,
            action,
            reward,
        });
        state = next;
        if done {
            terminal = true;
            break;
        }
    }
    let mut rtg = vec![0.0; steps.len()];
    let mut acc = 0.0;
    for t in (0..steps.len()).rev() {
        acc = steps[t].reward + gamma * acc;
        rtg[t] = acc;
    }
    Ok(Trajectory {
        level_id: level.id,
        steps,
        terminal,
        gamma,
        return_to_go: rtg,
    })
}

/// Discounted return of a trajectory under the given gamma.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> f64 {
    let mut acc = 0.0;
    for step in traj.steps.iter().rev() {
        acc = step.reward + gamma * acc;
    }
    acc
}

/// Goal reachable from start (matrix levels are always solvable).
pub fn is_solvable(level: &LevelSpec) -> bool {
    match &level.payload {
        LevelPayload::Grid(g) => bfs_distance(g).is_some(),
        LevelPayload::Matrix(_) => true,
    }
}

/// The level family levels are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum SpaceConfig {
    Grid {
        width: usize,
        height: usize,
        wall_prob: f64,
        /// Defaults to 2 * width * height when absent.
        horizon: Option<usize>,
    },
    Matrix {
        actions: usize,
        payoff_low: f64,
        payoff_high: f64,
    },
}

impl SpaceConfig {
    pub fn kind(&self) -> LevelKind {
        match self {
            SpaceConfig::Grid { .. } => LevelKind::GridMaze,
            SpaceConfig::Matrix { .. } => LevelKind::MatrixGame,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            SpaceConfig::Grid { .. } => GRID_ACTIONS,
            SpaceConfig::Matrix { actions, .. } => *actions,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            SpaceConfig::Grid {
                width,
                height,
                horizon,
                ..
            } => horizon.unwrap_or(2 * width * height),
            SpaceConfig::Matrix { .. } => 1,
        }
    }

    pub fn max_abs_return(&self) -> f64 {
        match self {
            SpaceConfig::Grid { .. } => 1.0,
            SpaceConfig::Matrix {
                payoff_low,
                payoff_high,
                ..
            } => payoff_low.abs().max(payoff_high.abs()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SpaceConfig::Grid {
                width,
                height,
                wall_prob,
                horizon,
            } => {
                if *width < 2 || *height < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "grid space must be at least 2x2, got {width}x{height}"
                    )));
                }
                if !(0.0..=1.0).contains(wall_prob) {
                    return Err(Error::InvalidArgument(format!(
                        "wall probability {wall_prob} outside [0,1]"
                    )));
                }
                if horizon == &Some(0) {
                    return Err(Error::InvalidArgument("horizon must be >= 1".to_string()));
                }
            }
            SpaceConfig::Matrix {
                actions,
                payoff_low,
                payoff_high,
            } => {
                if *actions < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "matrix space needs >= 2 actions, got {actions}"
                    )));
                }
                if !payoff_low.is_finite() || !payoff_high.is_finite() || payoff_low > payoff_high {
                    return Err(Error::InvalidArgument(format!(
                        "bad payoff range [{payoff_low}, {payoff_high}]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The environment-family description the space induces.
    pub fn upomdp_spec(&self, gamma: f64) -> Result<UpomdpSpec> {
        self.validate()?;
        if !(0.0 < gamma && gamma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in (0,1), got {gamma}"
            )));
        }
        let (reward_min, reward_max) = match self {
            SpaceConfig::Grid { .. } => (0.0, 1.0),
            SpaceConfig::Matrix {
                payoff_low,
                payoff_high,
                ..
            } => (*payoff_low, *payoff_high),
        };
        Ok(UpomdpSpec {
            kind: self.kind(),
            n_actions: self.n_actions(),
            gamma,
            reward_min,
            reward_max,
            deterministic: true,
            horizon: self.horizon(),
        })
    }
}

/// The tuple-level description of the environment family: action count,
/// reward bounds, discount, and the (deterministic) transition law. Mostly
/// consumed by analysis code that needs declared bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct UpomdpSpec {
    pub kind: LevelKind,
    pub n_actions: usize,
    pub gamma: f64,
    pub reward_min: f64,
    pub reward_max: f64,
    pub deterministic: bool,
    pub horizon: usize,
}

const SAMPLE_RETRIES: usize = 128;

/// Draws one level uniformly from the space: each cell is a wall with the
/// configured probability, then start and goal are drawn from distinct free
/// cells. A draw without two free cells is retried a bounded number of times.
pub fn sample_level_uniform<R: Rng>(space: &SpaceConfig, rng: &mut R) -> Result<LevelSpec> {
    space.validate()?;
    match space {
        SpaceConfig::Grid {
            width,
            height,
            wall_prob,
            horizon,
        } => {
            for _ in 0..SAMPLE_RETRIES {
                let walls: Vec<bool> = (0..width * height)
                    .map(|_| rng.gen::<f64>() < *wall_prob)
                    .collect();
                let free: Vec<usize> = (0..width * height).filter(|&i| !walls[i]).collect();
                if free.len() < 2 {
                    continue;
                }
                let si = free[rng.gen_range(0..free.len())];
                let gi = loop {
                    let c = free[rng.gen_range(0..free.len())];
                    if c != si {
                        break c;
                    }
                };
                let start = (si % width, si / width);
                let goal = (gi % width, gi / width);
                let t = horizon.unwrap_or(2 * width * height);
                return make_grid_level_with_horizon(*width, *height, walls, start, goal, t);
            }
            Err(Error::InvalidArgument(format!(
                "could not draw a level with two free cells in {SAMPLE_RETRIES} tries (wall_prob too high?)"
            )))
        }
        SpaceConfig::Matrix {
            actions,
            payoff_low,
            payoff_high,
        } => {
            let payoffs: Vec<f64> = (0..*actions)
                .map(|_| rng.gen_range(*payoff_low..=*payoff_high))
                .collect();
            make_matrix_level(payoffs)
        }
    }
}

// ---------------------------------------------------------------------------
// Level text format: one level per line.
//   grid:   <id> grid <width> <height> <wallmask_hex> <sx>,<sy> <gx>,<gy> <T>
//   matrix: <id> matrix <p0,p1,...,pk> <T>
// The wall mask packs cell (x,y) at bit index y*width+x, bytes little-endian,
// two lowercase hex digits per byte.
// ---------------------------------------------------------------------------

fn walls_to_hex(walls: &[bool]) -> String {
    let nbytes = walls.len().div_ceil(8);
    let mut bytes = vec![0u8; nbytes];
    for (i, &w) in walls.iter().enumerate() {
        if w {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn walls_from_hex(hex: &str, cells: usize, line: usize) -> Result<Vec<bool>> {
    let expected = cells.div_ceil(8) * 2;
    if hex.len() != expected {
        return Err(Error::Parse {
            line,
            message: format!("wall mask has {} hex digits, expected {expected}", hex.len()),
        });
    }
    let mut bytes = Vec::with_capacity(hex.len() / 2);
    for i in (0..hex.len()).step_by(2) {
        let b = u8::from_str_radix(&hex[i..i + 2], 16).map_err(|e| Error::Parse {
            line,
            message: format!("bad wall mask: {e}"),
        })?;
        bytes.push(b);
    }
    Ok((0..cells).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

pub fn level_to_line(level: &LevelSpec) -> String {
    match &level.payload {
        LevelPayload::Grid(g) => format!(
            "{} grid {} {} {} {},{} {},{} {}",
            level.id,
            g.width,
            g.height,
            walls_to_hex(&g.walls),
            g.start.0,
            g.start.1,
            g.goal.0,
            g.goal.1,
            level.horizon
        ),
        LevelPayload::Matrix(m) => {
            let payoffs: Vec<String> = m.payoffs.iter().map(|p| crate::csvio::fmt_f64(*p)).collect();
            format!("{} matrix {} {}", level.id, payoffs.join(","), level.horizon)
        }
    }
}

fn parse_pair(tok: &str, line: usize) -> Result<(usize, usize)> {
    let (a, b) = tok.split_once(',').ok_or(Error::Parse {
        line,
        message: format!("expected x,y pair, got '{tok}'"),
    })?;
    let parse = |s: &str| {
        s.parse::<usize>().map_err(|e| Error::Parse {
            line,
            message: format!("bad coordinate '{s}': {e}"),
        })
    };
    Ok((parse(a)?, parse(b)?))
}

/// Parses one level line; the stored id must match the recomputed content hash.
pub fn level_from_line(text: &str, line: usize) -> Result<LevelSpec> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let fail = |message: String| Error::Parse { line, message };
    if toks.len() < 2 {
        return Err(fail(format!("too few fields in level line: '{text}'")));
    }
    let id: u64 = toks[0]
        .parse()
        .map_err(|e| fail(format!("bad level id '{}': {e}", toks[0])))?;
    let level = match toks[1] {
        "grid" => {
            if toks.len() != 8 {
                return Err(fail(format!("grid line has {} fields, expected 8", toks.len())));
            }
            let width: usize = toks[2].parse().map_err(|e| fail(format!("bad width: {e}")))?;
            let height: usize = toks[3].parse().map_err(|e| fail(format!("bad height: {e}")))?;
            let walls = walls_from_hex(toks[4], width * height, line)?;
            let start = parse_pair(toks[5], line)?;
            let goal = parse_pair(toks[6], line)?;
            let horizon: usize = toks[7].parse().map_err(|e| fail(format!("bad horizon: {e}")))?;
            make_grid_level_with_horizon(width, height, walls, start, goal, horizon)?
        }
        "matrix" => {
            if toks.len() != 4 {
                return Err(fail(format!("matrix line has {} fields, expected 4", toks.len())));
            }
            let payoffs: Vec<f64> = toks[2]
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|e| fail(format!("bad payoff '{s}': {e}"))))
                .collect::<Result<_>>()?;
            let horizon: usize = toks[3].parse().map_err(|e| fail(format!("bad horizon: {e}")))?;
            if horizon != 1 {
                return Err(fail("matrix levels have horizon 1".to_string()));
            }
            make_matrix_level(payoffs)?
        }
        other => return Err(fail(format!("unknown level kind '{other}'"))),
    };
    if level.id != id {
        return Err(fail(format!(
            "stored id {id} does not match content hash {}",
            level.id
        )));
    }
    Ok(level)
}

pub fn levels_to_string(levels: &[LevelSpec]) -> String {
    let mut out = String::new();
    for level in levels {
        out.push_str(&level_to_line(level));
        out.push('\n');
    }
    out
}

pub fn levels_from_string(text: &str) -> Result<Vec<LevelSpec>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| level_from_line(l, i + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    pub(crate) struct Scripted(pub Vec<usize>);
    impl ActionPolicy for Scripted {
        fn action_probs(&self, obs: &Observation, n: usize) -> Vec<f64> {
            // one-hot on the scripted action for the current position index
            let t = match obs {
                Observation::Grid { x, y, .. } => x + y, // works for monotone paths
                Observation::Matrix => 0,
            };
            let a = self.0[t.min(self.0.len() - 1)];
            let mut p = vec![0.0; n];
            p[a] = 1.0;
            p
        }
    }

    fn empty3x3() -> LevelSpec {
        make_grid_level(3, 3, vec![false; 9], (0, 0), (2, 2)).unwrap()
    }

    #[test]
    fn grid_level_defaults() {
        let level = empty3x3();
        assert_eq!(level.horizon, 18);
        assert_eq!(level.n_actions(), 4);
        assert!(is_solvable(&level));
    }

    #[test]
    fn goal_on_wall_rejected() {
        let mut walls = vec![false; 9];
        walls[8] = true;
        let err = make_grid_level(3, 3, walls, (0, 0), (2, 2));
        assert!(matches!(err, Err(Error::InvalidLevel(_))));
    }

    #[test]
    fn coincident_start_goal_rejected() {
        assert!(make_grid_level(3, 3, vec![false; 9], (1, 1), (1, 1)).is_err());
    }

    #[test]
    fn id_is_content_deterministic() {
        let a = empty3x3();
        let b = empty3x3();
        assert_eq!(a.id, b.id);
        let c = make_grid_level(3, 3, vec![false; 9], (0, 0), (2, 1)).unwrap();
        assert_ne!(a.id, c.id);
    }

    #[test]
    fn step_moves_and_blocks() {
        let level = empty3x3();
        // action 3 = right
        let (s, r, done) = step(&level, &State::Grid { x: 0, y: 0 }, 3).unwrap();
        assert_eq!(s, State::Grid { x: 1, y: 0 });
        assert_eq!(r, 0.0);
        assert!(!done);
        // moving up from the top edge stays put
        let (s, r, _) = step(&level, &State::Grid { x: 0, y: 0 }, 0).unwrap();
        assert_eq!(s, State::Grid { x: 0, y: 0 });
        assert_eq!(r, 0.0);
    }

    #[test]
    fn wall_blocks_move() {
        let mut walls = vec![false; 9];
        walls[1] = true; // (1,0)
        let level = make_grid_level(3, 3, walls, (0, 0), (2, 2)).unwrap();
        let (s, r, done) = step(&level, &State::Grid { x: 0, y: 0 }, 3).unwrap();
        assert_eq!(s, State::Grid { x: 0, y: 0 });
        assert_eq!(r, 0.0);
        assert!(!done);
    }

    #[test]
    fn goal_arrival_terminates_with_reward() {
        let level = empty3x3();
        let (s, r, done) = step(&level, &State::Grid { x: 1, y: 2 }, 3).unwrap();
        assert_eq!(s, State::Grid { x: 2, y: 2 });
        assert_eq!(r, 1.0);
        assert!(done);
    }

    #[test]
    fn out_of_range_action_rejected() {
        let level = empty3x3();
        assert!(step(&level, &State::Grid { x: 0, y: 0 }, 4).is_err());
    }

    #[test]
    fn matrix_step_is_one_shot() {
        let level = make_matrix_level(vec![0.2, 0.7]).unwrap();
        let (_, r, done) = step(&level, &State::Matrix, 1).unwrap();
        assert_eq!(r, 0.7);
        assert!(done);
    }

    #[test]
    fn scripted_rollout_reaches_goal_in_bfs_steps() {
        // right, right, down, down from (0,0) to (2,2); Scripted keys on x+y.
        let level = empty3x3();
        let policy = Scripted(vec![3, 3, 1, 1, 1]);
        let mut rng = stream_rng(0, Stream::Env, &[0]);
        let traj = rollout(&policy, &level, 0.9, &mut rng).unwrap();
        assert_eq!(traj.len(), 4);
        assert!(traj.terminal);
        assert_eq!(
            bfs_distance(level.grid().unwrap()).unwrap(),
            4,
            "BFS oracle agrees with the scripted path length"
        );
        assert!((discounted_return(&traj, 0.9) - 0.9_f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn matrix_rollout_has_length_one() {
        let level = make_matrix_level(vec![1.0, 0.0]).unwrap();
        let policy = Scripted(vec![0]);
        let mut rng = stream_rng(0, Stream::Env, &[0]);
        let traj = rollout(&policy, &level, 0.9, &mut rng).unwrap();
        assert_eq!(traj.len(), 1);
        assert!(traj.terminal);
    }

    #[test]
    fn rollout_is_seed_deterministic() {
        let level = empty3x3();
        struct Uniform;
        impl ActionPolicy for Uniform {
            fn action_probs(&self, _: &Observation, n: usize) -> Vec<f64> {
                vec![1.0 / n as f64; n]
            }
        }
        let t1 = rollout(&Uniform, &level, 0.9, &mut stream_rng(9, Stream::Env, &[5])).unwrap();
        let t2 = rollout(&Uniform, &level, 0.9, &mut stream_rng(9, Stream::Env, &[5])).unwrap();
        let acts1: Vec<usize> = t1.steps.iter().map(|s| s.action).collect();
        let acts2: Vec<usize> = t2.steps.iter().map(|s| s.action).collect();
        assert_eq!(acts1, acts2);
    }

    #[test]
    fn return_to_go_recurrence_holds() {
        let level = empty3x3();
        let policy = Scripted(vec![3, 3, 1, 1, 1]);
        let mut rng = stream_rng(0, Stream::Env, &[0]);
        let traj = rollout(&policy, &level, 0.9, &mut rng).unwrap();
        for t in 0..traj.len() {
            let next = if t + 1 < traj.len() {
                traj.return_to_go[t + 1]
            } else {
                0.0
            };
            assert!((traj.return_to_go[t] - (traj.steps[t].reward + 0.9 * next)).abs() < 1e-15);
        }
    }

    #[test]
    fn discounted_return_examples() {
        let mk = |rewards: &[f64]| Trajectory {
            level_id: 0,
            steps: rewards
                .iter()
                .map(|&r| TrajStep {
                    obs: Observation::Matrix,
                    action: 0,
                    reward: r,
                })
                .collect(),
            terminal: true,
            gamma: 1.0,
            return_to_go: vec![0.0; rewards.len()],
        };
        assert!((discounted_return(&mk(&[0.0, 0.0, 1.0]), 0.9) - 0.81).abs() < 1e-15);
        assert_eq!(discounted_return(&mk(&[0.0, 0.0]), 0.9), 0.0);
        assert_eq!(discounted_return(&mk(&[1.0, 1.0]), 1.0), 2.0);
    }

    #[test]
    fn solvability_cases() {
        assert!(is_solvable(&empty3x3()));
        // goal enclosed by walls
        let mut walls = vec![false; 9];
        walls[5] = true; // (2,1)
        walls[7] = true; // (1,2)
        let level = make_grid_level(3, 3, walls, (0, 0), (2, 2)).unwrap();
        assert!(!is_solvable(&level));
        // single corridor
        let corr = make_grid_level(3, 2, vec![false, false, false, true, true, true], (0, 0), (2, 0))
            .unwrap();
        assert!(is_solvable(&corr));
        assert_eq!(bfs_distance(corr.grid().unwrap()), Some(2));
    }

    #[test]
    fn uniform_sampling_edges() {
        let space = SpaceConfig::Grid {
            width: 3,
            height: 3,
            wall_prob: 0.0,
            horizon: None,
        };
        let mut rng = stream_rng(3, Stream::Levels, &[0]);
        let level = sample_level_uniform(&space, &mut rng).unwrap();
        assert!(level.grid().unwrap().walls.iter().all(|w| !w));

        let solid = SpaceConfig::Grid {
            width: 3,
            height: 3,
            wall_prob: 1.0,
            horizon: None,
        };
        assert!(sample_level_uniform(&solid, &mut rng).is_err());

        let mut r1 = stream_rng(3, Stream::Levels, &[7]);
        let mut r2 = stream_rng(3, Stream::Levels, &[7]);
        let space = SpaceConfig::Grid {
            width: 4,
            height: 4,
            wall_prob: 0.3,
            horizon: None,
        };
        assert_eq!(
            sample_level_uniform(&space, &mut r1).unwrap(),
            sample_level_uniform(&space, &mut r2).unwrap()
        );
    }

    #[test]
    fn level_line_round_trip() {
        let mut walls = vec![false; 9];
        walls[4] = true;
        let grid = make_grid_level(3, 3, walls, (0, 0), (2, 2)).unwrap();
        let matrix = make_matrix_level(vec![0.25, -1.5, 3.0]).unwrap();
        for level in [grid, matrix] {
            let line = level_to_line(&level);
            let back = level_from_line(&line, 1).unwrap();
            assert_eq!(back, level);
        }
    }

    #[test]
    fn tampered_id_rejected() {
        let level = empty3x3();
        let line = level_to_line(&level);
        let tampered = format!("1{line}");
        assert!(level_from_line(&tampered, 1).is_err());
    }

    #[test]
    fn observation_key_distinguishes_position() {
        let level = empty3x3();
        let o1 = observe(&level, &State::Grid { x: 0, y: 0 });
        let o2 = observe(&level, &State::Grid { x: 1, y: 0 });
        assert_ne!(o1.key(), o2.key());
        assert_eq!(o1.features().len(), 20);
    }
}
