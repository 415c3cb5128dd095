//! The finite working set of levels.
//!
//! In static mode the buffer never changes after initialization. In dynamic
//! mode, freshly sampled levels compete with incumbents each iteration: the
//! top `N` of the union survive, newcomers inherit the adversary weight of
//! the slot they take, and the weight vector is re-projected onto the
//! truncated simplex.

use crate::adversary::project_truncated_simplex;
use crate::env::{sample_level_uniform, LevelSpec, SpaceConfig};
use crate::error::{Error, Result};
use rand::Rng;
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelBuffer {
    levels: Vec<LevelSpec>,
    last_scores: Vec<Option<f64>>,
    /// Iterations since each slot was last scored; PLR bookkeeping.
    staleness: Vec<u64>,
    generation: u64,
}

impl LevelBuffer {
    /// Wraps an explicit level list. Capacity must be at least 2; duplicate
    /// ids are allowed here (diagnostic setups use them), while
    /// [`init_buffer`] enforces distinctness for sampled buffers.
    pub fn from_levels(levels: Vec<LevelSpec>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "buffer needs at least 2 levels, got {}",
                levels.len()
            )));
        }
        let n = levels.len();
        Ok(Self {
            levels,
            last_scores: vec![None; n],
            staleness: vec![0; n],
            generation: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    pub fn level(&self, slot: usize) -> &LevelSpec {
        &self.levels[slot]
    }

    pub fn ids(&self) -> HashSet<u64> {
        self.levels.iter().map(|l| l.id).collect()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn staleness(&self) -> &[u64] {
        &self.staleness
    }

    pub fn last_scores(&self) -> &[Option<f64>] {
        &self.last_scores
    }

    pub fn fully_scored(&self) -> bool {
        self.last_scores.iter().all(|s| s.is_some())
    }

    /// Records fresh scores for every slot and resets staleness.
    pub fn note_scored(&mut self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.len() {
            return Err(Error::Mismatch(format!(
                "{} scores for {} slots",
                scores.len(),
                self.len()
            )));
        }
        for (slot, &s) in scores.iter().enumerate() {
            self.last_scores[slot] = Some(s);
            self.staleness[slot] = 0;
        }
        Ok(())
    }

    /// Records a score for one slot and resets its staleness.
    pub fn note_scored_slot(&mut self, slot: usize, score: f64) {
        self.last_scores[slot] = Some(score);
        self.staleness[slot] = 0;
    }

    /// Ages every slot by one iteration.
    pub fn tick_staleness(&mut self) {
        for s in &mut self.staleness {
            *s += 1;
        }
    }

    /// Replaces the lowest-scoring slot if the candidate scores higher;
    /// the insertion path used by the replay baseline.
    pub fn replace_min_if_better(&mut self, level: LevelSpec, score: f64) -> bool {
        if self.ids().contains(&level.id) {
            return false;
        }
        let mut min_slot = 0;
        let mut min_score = f64::INFINITY;
        for (slot, s) in self.last_scores.iter().enumerate() {
            let v = s.unwrap_or(f64::NEG_INFINITY);
            if v < min_score {
                min_score = v;
                min_slot = slot;
            }
        }
        if score > min_score {
            self.levels[min_slot] = level;
            self.last_scores[min_slot] = Some(score);
            self.staleness[min_slot] = 0;
            self.generation += 1;
            true
        } else {
            false
        }
    }

    pub fn max_abs_return(&self) -> f64 {
        self.levels
            .iter()
            .fold(0.0_f64, |a, l| a.max(l.max_abs_return()))
    }

    pub fn max_horizon(&self) -> usize {
        self.levels.iter().map(|l| l.horizon).max().unwrap_or(1)
    }
}

const INIT_RETRY_FACTOR: usize = 64;

/// Fills a buffer with `n` distinct levels sampled uniformly from the space.
pub fn init_buffer<R: Rng>(space: &SpaceConfig, n: usize, rng: &mut R) -> Result<LevelBuffer> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "buffer needs at least 2 levels, got capacity {n}"
        )));
    }
    let mut levels: Vec<LevelSpec> = Vec::with_capacity(n);
    let mut seen = HashSet::new();
    let mut attempts = 0;
    while levels.len() < n {
        attempts += 1;
        if attempts > INIT_RETRY_FACTOR * n {
            return Err(Error::InvalidArgument(format!(
                "could not fill {n} distinct levels in {attempts} draws (space too small?)"
            )));
        }
        let level = sample_level_uniform(space, rng)?;
        if seen.insert(level.id) {
            levels.push(level);
        }
    }
    LevelBuffer::from_levels(levels)
}

/// Outcome of one dynamic buffer update.
#[derive(Debug, Clone)]
pub struct DynamicUpdate {
    pub buffer: LevelBuffer,
    /// Adversary weights remapped to the new slots and re-projected.
    pub weights: Vec<f64>,
    /// Scores aligned with the new slots (incumbents keep theirs, newcomers
    /// bring theirs).
    pub merged_scores: Vec<f64>,
    pub changed: bool,
    /// Highest score among levels that were dropped, when any were.
    pub max_discarded_score: Option<f64>,
}

#[derive(Clone, Copy)]
enum Origin {
    Incumbent(usize),
    Fresh(usize),
}

/// Keeps the top `N` scoring levels of `buffer + new_levels`.
///
/// Selection order: score descending, incumbents before newcomers on ties,
/// then id ascending. Surviving incumbents keep their slots; newcomers fill
/// freed slots in descending score order and inherit the displaced slot's
/// weight, so total mass is preserved up to the single re-projection.
pub fn dynamic_update(
    buffer: &LevelBuffer,
    weights: &[f64],
    xi: f64,
    new_levels: &[LevelSpec],
    scores_old: &[f64],
    scores_new: &[f64],
) -> Result<DynamicUpdate> {
    if weights.len() != buffer.len() || scores_old.len() != buffer.len() {
        return Err(Error::Mismatch(format!(
            "buffer of {} with {} weights and {} scores",
            buffer.len(),
            weights.len(),
            scores_old.len()
        )));
    }
    if scores_new.len() != new_levels.len() {
        return Err(Error::Mismatch(format!(
            "{} new levels with {} scores",
            new_levels.len(),
            scores_new.len()
        )));
    }
    if new_levels.is_empty() {
        let mut buffer = buffer.clone();
        buffer.note_scored(scores_old)?;
        return Ok(DynamicUpdate {
            buffer,
            weights: weights.to_vec(),
            merged_scores: scores_old.to_vec(),
            changed: false,
            max_discarded_score: None,
        });
    }

    let n = buffer.len();
    let mut candidates: Vec<(f64, bool, u64, Origin)> = Vec::with_capacity(n + new_levels.len());
    for (slot, level) in buffer.levels().iter().enumerate() {
        candidates.push((scores_old[slot], true, level.id, Origin::Incumbent(slot)));
    }
    let incumbent_ids = buffer.ids();
    let mut fresh_seen = HashSet::new();
    for (j, level) in new_levels.iter().enumerate() {
        // a newcomer that duplicates an incumbent (or an earlier newcomer)
        // adds nothing to the union
        if incumbent_ids.contains(&level.id) || !fresh_seen.insert(level.id) {
            continue;
        }
        candidates.push((scores_new[j], false, level.id, Origin::Fresh(j)));
    }
    // score desc, incumbents win ties, then id asc
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| b.1.cmp(&a.1))
            .then_with(|| a.2.cmp(&b.2))
    });
    let kept = &candidates[..n];
    let max_discarded_score = candidates[n..]
        .iter()
        .map(|c| c.0)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a: f64| a.max(s))));

    let mut surviving_slots = vec![false; n];
    let mut entrants: Vec<(f64, u64, usize)> = Vec::new(); // (score, id, fresh index)
    for (score, _, id, origin) in kept {
        match origin {
            Origin::Incumbent(slot) => surviving_slots[*slot] = true,
            Origin::Fresh(j) => entrants.push((*score, *id, *j)),
        }
    }
    if entrants.is_empty() {
        let mut buffer = buffer.clone();
        buffer.note_scored(scores_old)?;
        return Ok(DynamicUpdate {
            buffer,
            weights: weights.to_vec(),
            merged_scores: scores_old.to_vec(),
            changed: false,
            max_discarded_score,
        });
    }
    // strongest newcomers take the lowest freed slots
    entrants.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    let freed: Vec<usize> = (0..n).filter(|&s| !surviving_slots[s]).collect();
    debug_assert_eq!(freed.len(), entrants.len());

    let mut levels = buffer.levels().to_vec();
    let mut new_weights = weights.to_vec();
    let mut merged_scores = scores_old.to_vec();
    for (slot, (score, _, j)) in freed.iter().zip(&entrants) {
        levels[*slot] = new_levels[*j].clone();
        merged_scores[*slot] = *score;
        // weight inheritance: the entrant keeps the displaced level's mass
        new_weights[*slot] = weights[*slot];
    }
    let projected = project_truncated_simplex(&new_weights, xi)?;
    let mut next = LevelBuffer {
        levels,
        last_scores: vec![None; n],
        staleness: vec![0; n],
        generation: buffer.generation() + 1,
    };
    next.note_scored(&merged_scores)?;
    Ok(DynamicUpdate {
        buffer: next,
        weights: projected,
        merged_scores,
        changed: true,
        max_discarded_score,
    })
}

// ---------------------------------------------------------------------------
// Snapshot format: header "buffer <N> <generation>", then one level line per
// slot followed by its score and weight.
// ---------------------------------------------------------------------------

pub fn buffer_to_string(buffer: &LevelBuffer, weights: &[f64]) -> Result<String> {
    use std::fmt::Write as _;
    if weights.len() != buffer.len() {
        return Err(Error::Mismatch("weights do not match buffer".to_string()));
    }
    let mut out = String::new();
    let _ = writeln!(out, "buffer {} {}", buffer.len(), buffer.generation());
    for (slot, level) in buffer.levels().iter().enumerate() {
        let score = buffer.last_scores()[slot].unwrap_or(f64::NAN);
        let _ = writeln!(
            out,
            "{} {} {}",
            crate::env::level_to_line(level),
            crate::csvio::fmt_f64(score),
            crate::csvio::fmt_f64(weights[slot])
        );
    }
    Ok(out)
}

pub fn buffer_from_string(text: &str) -> Result<(LevelBuffer, Vec<f64>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty buffer snapshot".to_string(),
    })?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 || toks[0] != "buffer" {
        return Err(Error::Parse {
            line: 1,
            message: format!("bad buffer header '{header}'"),
        });
    }
    let n: usize = toks[1].parse().map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad buffer size: {e}"),
    })?;
    let generation: u64 = toks[2].parse().map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad generation: {e}"),
    })?;
    let mut levels = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        let (i, line) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "fewer level lines than declared".to_string(),
        })?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 {
            return Err(Error::Parse {
                line: i + 1,
                message: "level line too short".to_string(),
            });
        }
        let level_part = toks[..toks.len() - 2].join(" ");
        let level = crate::env::level_from_line(&level_part, i + 1)?;
        let score: f64 = toks[toks.len() - 2].parse().map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad score: {e}"),
        })?;
        let weight: f64 = toks[toks.len() - 1].parse().map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad weight: {e}"),
        })?;
        levels.push(level);
        scores.push(score);
        weights.push(weight);
    }
    let mut buffer = LevelBuffer::from_levels(levels)?;
    buffer.generation = generation;
    for (slot, s) in scores.iter().enumerate() {
        if !s.is_nan() {
            buffer.last_scores[slot] = Some(*s);
        }
    }
    Ok((buffer, weights))
}
