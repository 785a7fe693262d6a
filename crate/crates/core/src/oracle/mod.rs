//! Brute-force ground truth for small finite envs: shortest paths, exact
//! policy-conditioned distances, exact DDL policy iteration, the
//! cumulative-distance identity and the risky/safe branch analysis.
//!
//! Oracle tables report `None` (UNREACHED) for pairs that are never
//! connected; they never substitute the learner's `d_max` cap.

mod identity;
mod hitting;
mod pathological;
mod policy_distance;
mod theorem;

pub use identity::{cumulative_identity_check, IdentityReport};
pub use hitting::{conditional_hitting_distances, hitting_distances};
pub use pathological::{
    finite_horizon_cost, pathological_branch_analysis, pathological_crossover, BranchChoice,
    BranchRow,
};
pub use policy_distance::exact_policy_distance;
pub use theorem::{ddl_exact_policy_iteration, PolicyIterationReport, PolicyRound};

use std::collections::VecDeque;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::{finite_state_count, Action, Env, State};
use crate::error::{DdlError, Result};
use crate::policy::{Actor, QPolicy};

/// Dense `(s, s')` table; `None` means UNREACHED.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDistanceTable {
    n: usize,
    values: Vec<Option<f64>>,
    /// Monte Carlo standard errors, when the table was estimated.
    std_err: Option<Vec<f64>>,
}

impl ExactDistanceTable {
    pub fn unreached(n: usize) -> Self {
        ExactDistanceTable {
            n,
            values: vec![None; n * n],
            std_err: None,
        }
    }

    pub fn state_count(&self) -> usize {
        self.n
    }

    pub fn get(&self, s: State, t: State) -> Option<f64> {
        self.values[s * self.n + t]
    }

    pub fn set(&mut self, s: State, t: State, v: Option<f64>) {
        self.values[s * self.n + t] = v;
    }

    pub fn std_err(&self, s: State, t: State) -> Option<f64> {
        self.std_err.as_ref().map(|e| e[s * self.n + t])
    }

    /// Column `d(., goal)`.
    pub fn to_goal(&self, goal: State) -> Vec<Option<f64>> {
        (0..self.n).map(|s| self.get(s, goal)).collect()
    }
}

/// All-pairs shortest-path step counts over the action graph.
pub fn bfs_distance(env: &dyn Env) -> Result<ExactDistanceTable> {
    let n = finite_state_count(env)?;
    let succ = successor_lists(env)?;
    let mut table = ExactDistanceTable::unreached(n);
    for s in env.enumerate_states()? {
        for (t, d) in bfs_from_succ(&succ, s).into_iter().enumerate() {
            table.set(s, t, d.map(|d| d as f64));
        }
    }
    Ok(table)
}

/// Shortest-path step counts from every state to `target`.
pub fn bfs_to(env: &dyn Env, target: State) -> Result<Vec<Option<usize>>> {
    let succ = successor_lists(env)?;
    let n = succ.len();
    if target >= n {
        return Err(DdlError::InvalidState(target));
    }
    let mut pred = vec![Vec::new(); n];
    for (s, next) in succ.iter().enumerate() {
        for &t in next {
            pred[t].push(s);
        }
    }
    Ok(bfs_from_succ(&pred, target))
}

/// Deterministic successors of every enumerated state (empty lists for
/// states the env does not enumerate).
fn successor_lists(env: &dyn Env) -> Result<Vec<Vec<State>>> {
    if !env.is_deterministic() {
        return Err(DdlError::Unsupported("shortest paths need a deterministic env"));
    }
    let n = finite_state_count(env)?;
    let mut succ = vec![Vec::new(); n];
    for s in env.enumerate_states()? {
        for a in 0..env.spec().action_count {
            let t = env.afterstate(s, a)?;
            if !succ[s].contains(&t) {
                succ[s].push(t);
            }
        }
    }
    Ok(succ)
}

fn bfs_from_succ(succ: &[Vec<State>], source: State) -> Vec<Option<usize>> {
    let mut dist = vec![None; succ.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(s) = queue.pop_front() {
        let d = dist[s].unwrap_or(0);
        for &t in &succ[s] {
            if dist[t].is_none() {
                dist[t] = Some(d + 1);
                queue.push_back(t);
            }
        }
    }
    dist
}

/// A stationary (time-independent) stochastic policy given as one action
/// distribution per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    action_count: usize,
    probs: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    pub fn uniform(state_count: usize, action_count: usize) -> Self {
        StationaryPolicy {
            action_count,
            probs: vec![vec![1.0 / action_count as f64; action_count]; state_count],
        }
    }

    pub fn deterministic(actions: &[Action], action_count: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; action_count];
                row[a] = 1.0;
                row
            })
            .collect();
        StationaryPolicy { action_count, probs }
    }

    pub fn from_rows(probs: Vec<Vec<f64>>) -> Result<Self> {
        let action_count = probs.first().map_or(0, Vec::len);
        for row in &probs {
            let sum: f64 = row.iter().sum();
            if row.len() != action_count || (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| *p < 0.0) {
                return Err(DdlError::config("policy", "rows must be probability vectors of equal length"));
            }
        }
        Ok(StationaryPolicy { action_count, probs })
    }

    /// Greedy (noise-free) policy of a Q table for one goal.
    pub fn greedy_of(policy: &QPolicy, goal: State) -> Self {
        let actions: Vec<Action> = (0..policy.state_count()).map(|s| policy.greedy_action(s, goal)).collect();
        Self::deterministic(&actions, policy.action_count())
    }

    pub fn state_count(&self) -> usize {
        self.probs.len()
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn probs(&self, s: State) -> &[f64] {
        &self.probs[s]
    }

    pub fn is_deterministic(&self) -> bool {
        self.as_deterministic().is_some()
    }

    pub fn as_deterministic(&self) -> Option<Vec<Action>> {
        self.probs
            .iter()
            .map(|row| row.iter().position(|&p| p == 1.0))
            .collect()
    }

    pub fn sample(&self, s: State, rng: &mut dyn RngCore) -> Action {
        let row = &self.probs[s];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl Actor for StationaryPolicy {
    fn act(&self, state: State, _goal: Option<State>, rng: &mut dyn RngCore) -> Action {
        self.sample(state, rng)
    }
}

/// Expected one-step transition matrix under `policy`, as sparse rows.
pub(crate) fn policy_transitions(env: &dyn Env, policy: &StationaryPolicy) -> Result<Vec<Vec<(State, f64)>>> {
    let n = finite_state_count(env)?;
    if policy.state_count() != n || policy.action_count() != env.spec().action_count {
        return Err(DdlError::ShapeMismatch {
            expected: format!("{n} states x {} actions", env.spec().action_count),
            got: format!("{} x {}", policy.state_count(), policy.action_count()),
        });
    }
    let mut rows = vec![Vec::new(); n];
    for s in env.enumerate_states()? {
        let mut row: Vec<(State, f64)> = Vec::new();
        for (a, &pa) in policy.probs(s).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (t, pt) in env.outcomes(s, a)? {
                match row.iter_mut().find(|(x, _)| *x == t) {
                    Some(entry) => entry.1 += pa * pt,
                    None => row.push((t, pa * pt)),
                }
            }
        }
        rows[s] = row;
    }
    Ok(rows)
}

/// Samples an episode under `policy` from `start`; stops on absorbing
/// states, at `stop` if given, or after `horizon` transitions.
pub(crate) fn simulate(
    env: &dyn Env,
    policy: &StationaryPolicy,
    start: State,
    stop: Option<State>,
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Result<(Vec<State>, Vec<Action>)> {
    let mut states = vec![start];
    let mut actions = Vec::new();
    let mut s = start;
    for _ in 0..horizon {
        if Some(s) == stop || env.is_absorbing(s) {
            break;
        }
        let a = policy.sample(s, rng);
        let tr = env.step(s, a, rng)?;
        actions.push(a);
        states.push(tr.next_state);
        s = tr.next_state;
    }
    Ok((states, actions))
}
