//! Goal proposal: unsupervised (farthest state from the start), from
//! preference queries over recent episode-final states, or fixed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::DistanceEstimator;
use crate::env::{finite_state_count, Env, GridMaze, State};
use crate::error::{DdlError, Result};
use crate::oracle::bfs_to;

pub const MAX_SLATE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalSource {
    Ddlus,
    Ddlfp,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalState {
    pub state: State,
    pub source: GoalSource,
    pub chosen_at_env_step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceQuery {
    pub query_id: u64,
    /// Final states of the most recent episodes, oldest first.
    pub candidates: Vec<State>,
    pub previous_goal: Option<State>,
    pub issued_at_env_step: u64,
}

impl PreferenceQuery {
    /// The "keep previous goal" answer.
    pub fn keep_index(&self) -> usize {
        self.candidates.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceResponse {
    pub query_id: u64,
    /// `0..N` picks a candidate; `N` keeps the previous goal.
    pub choice_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ProviderError {
    #[error("no answer before the timeout")]
    Timeout,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("provider disconnected")]
    Disconnected,
}

/// Anything that answers preference queries: a scripted oracle in tests and
/// batch runs, a human behind the HTTP endpoint in interactive runs. `ask`
/// may block.
pub trait PreferenceProvider {
    fn ask(&mut self, query: &PreferenceQuery) -> std::result::Result<PreferenceResponse, ProviderError>;
}

impl<P: PreferenceProvider + ?Sized> PreferenceProvider for Box<P> {
    fn ask(&mut self, query: &PreferenceQuery) -> std::result::Result<PreferenceResponse, ProviderError> {
        (**self).ask(query)
    }
}

/// Picks the candidate with the lowest score (lowest index on ties). With
/// `keep_if_not_better`, answers "keep previous" unless the best candidate
/// scores strictly below the previous goal.
#[derive(Debug, Clone)]
pub struct ScoreProvider {
    scores: Vec<f64>,
    keep_if_not_better: bool,
}

impl ScoreProvider {
    pub fn new(scores: Vec<f64>, keep_if_not_better: bool) -> Self {
        ScoreProvider {
            scores,
            keep_if_not_better,
        }
    }

    /// Shortest-path distance to a hidden target; unreachable cells score
    /// infinity.
    pub fn bfs_to_target(env: &dyn Env, target: State) -> Result<Self> {
        let d = bfs_to(env, target)?;
        let scores = d.into_iter().map(|d| d.map_or(f64::INFINITY, |d| d as f64)).collect();
        Ok(Self::new(scores, true))
    }

    /// Largest x coordinate wins.
    pub fn max_x(maze: &GridMaze) -> Self {
        let n = maze.width() * maze.height();
        Self::new((0..n).map(|s| -(maze.coords(s).0 as f64)).collect(), false)
    }

    fn score(&self, s: State) -> f64 {
        self.scores.get(s).copied().unwrap_or(f64::INFINITY)
    }
}

impl PreferenceProvider for ScoreProvider {
    fn ask(&mut self, query: &PreferenceQuery) -> std::result::Result<PreferenceResponse, ProviderError> {
        let mut best = 0;
        for (i, &c) in query.candidates.iter().enumerate().skip(1) {
            if self.score(c) < self.score(query.candidates[best]) {
                best = i;
            }
        }
        let choice_index = match query.previous_goal {
            Some(prev) if self.keep_if_not_better && self.score(query.candidates[best]) >= self.score(prev) => {
                query.keep_index()
            }
            _ => best,
        };
        Ok(PreferenceResponse {
            query_id: query.query_id,
            choice_index,
        })
    }
}

/// Always answers the same index, clamped to "keep previous".
#[derive(Debug, Clone, Copy)]
pub struct FixedIndexProvider(pub usize);

impl PreferenceProvider for FixedIndexProvider {
    fn ask(&mut self, query: &PreferenceQuery) -> std::result::Result<PreferenceResponse, ProviderError> {
        Ok(PreferenceResponse {
            query_id: query.query_id,
            choice_index: self.0.min(query.keep_index()),
        })
    }
}

/// Always keeps the previous goal.
#[derive(Debug, Clone, Copy)]
pub struct KeepPreviousProvider;

impl PreferenceProvider for KeepPreviousProvider {
    fn ask(&mut self, query: &PreferenceQuery) -> std::result::Result<PreferenceResponse, ProviderError> {
        Ok(PreferenceResponse {
            query_id: query.query_id,
            choice_index: query.keep_index(),
        })
    }
}

/// Farthest candidate from `s0` by estimated distance. Candidates are in
/// recency order (oldest first); among equal distances the most recent
/// occurrence wins.
pub fn ddlus_choose(
    distance: &dyn DistanceEstimator,
    candidates: impl IntoIterator<Item = State>,
    s0: State,
    env_step: u64,
) -> Result<GoalState> {
    // Each distinct state is scored once, ranked by its latest position.
    let mut last_seen: Vec<Option<usize>> = Vec::new();
    for (pos, s) in candidates.into_iter().enumerate() {
        if s >= last_seen.len() {
            last_seen.resize(s + 1, None);
        }
        last_seen[s] = Some(pos);
    }
    let mut best: Option<(f64, usize, State)> = None;
    for (s, pos) in last_seen.iter().enumerate().filter_map(|(s, p)| p.map(|p| (s, p))) {
        let d = distance.predict(s0, s);
        let better = match best {
            None => true,
            Some((bd, bpos, _)) => d > bd || (d == bd && pos > bpos),
        };
        if better {
            best = Some((d, pos, s));
        }
    }
    let (_, _, state) = best.ok_or(DdlError::EmptyPool)?;
    Ok(GoalState {
        state,
        source: GoalSource::Ddlus,
        chosen_at_env_step: env_step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdlfpOutcome {
    /// The new goal, or `None` when the previous goal is kept.
    pub goal: Option<GoalState>,
    /// Number of `ask` calls made (1 or 2).
    pub attempts: u32,
    /// Set when the provider failed and the previous goal was kept.
    pub fallback: Option<ProviderError>,
}

fn check_response(query: &PreferenceQuery, r: &PreferenceResponse) -> std::result::Result<(), ProviderError> {
    if r.query_id != query.query_id {
        return Err(ProviderError::Malformed(format!(
            "answer for query {} while {} is outstanding",
            r.query_id, query.query_id
        )));
    }
    if r.choice_index > query.keep_index() {
        return Err(ProviderError::Malformed(format!(
            "choice {} out of range 0..={}",
            r.choice_index,
            query.keep_index()
        )));
    }
    Ok(())
}

/// Issues one preference query over `recent_terminals` and returns the
/// pick. A timeout or disconnect keeps the previous goal; a malformed
/// answer is rejected and the same query is asked once more before
/// falling back to the previous goal.
pub fn ddlfp_choose(
    recent_terminals: &[State],
    provider: &mut dyn PreferenceProvider,
    previous_goal: Option<State>,
    query_id: u64,
    env_step: u64,
) -> Result<DdlfpOutcome> {
    if recent_terminals.is_empty() || recent_terminals.len() > MAX_SLATE {
        return Err(DdlError::config(
            "slate_size",
            format!("slate must hold 1..={MAX_SLATE} candidates, got {}", recent_terminals.len()),
        ));
    }
    let query = PreferenceQuery {
        query_id,
        candidates: recent_terminals.to_vec(),
        previous_goal,
        issued_at_env_step: env_step,
    };
    let mut attempts = 0;
    let mut last_err = None;
    while attempts < 2 {
        attempts += 1;
        match provider.ask(&query).and_then(|r| check_response(&query, &r).map(|_| r)) {
            Ok(r) => {
                let goal = (r.choice_index < query.keep_index()).then(|| GoalState {
                    state: query.candidates[r.choice_index],
                    source: GoalSource::Ddlfp,
                    chosen_at_env_step: env_step,
                });
                return Ok(DdlfpOutcome {
                    goal,
                    attempts,
                    fallback: None,
                });
            }
            Err(e @ ProviderError::Malformed(_)) => last_err = Some(e),
            Err(e) => {
                last_err = Some(e);
                break;
            }
        }
    }
    Ok(DdlfpOutcome {
        goal: None,
        attempts,
        fallback: last_err,
    })
}

/// A constant goal. Walls and out-of-range ids are rejected.
pub fn fixed_goal(env: &dyn Env, state: State, env_step: u64) -> Result<GoalState> {
    let n = finite_state_count(env)?;
    let free = match env.as_grid() {
        Some(g) => state < n && g.is_free(state),
        None => state < n,
    };
    if !free {
        return Err(DdlError::InvalidState(state));
    }
    Ok(GoalState {
        state,
        source: GoalSource::Fixed,
        chosen_at_env_step: env_step,
    })
}
