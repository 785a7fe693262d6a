use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{bfs_to, hitting_distances, StationaryPolicy};
use crate::env::{finite_state_count, Action, Env, State};
use crate::error::{DdlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRound {
    pub policy: StationaryPolicy,
    /// Exact `d^pi(s, goal)`; `None` where the policy never reaches the goal.
    pub distances: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyIterationReport {
    pub goal: State,
    /// Round 0 is the start policy.
    pub rounds: Vec<PolicyRound>,
    /// `(round, state)` pairs where `d_{r+1}(s) > d_r(s)`.
    pub monotonicity_violations: Vec<(usize, State)>,
    /// Distances stopped changing within `max_rounds`.
    pub converged: bool,
    /// At the fixpoint every state's distance equals its BFS distance.
    pub fixpoint_matches_bfs: bool,
    pub bfs: Vec<Option<usize>>,
}

impl PolicyIterationReport {
    pub fn passed(&self) -> bool {
        self.converged && self.monotonicity_violations.is_empty() && self.fixpoint_matches_bfs
    }
}

const TOL: f64 = 1e-9;

/// Idealized DDL: alternate exact distance evaluation of the current
/// policy with exact maximization of the discounted return under reward
/// `-d^pi(s, goal)`, starting from `start`. Checks pointwise monotonicity
/// of the distances every round and optimality at the fixpoint.
pub fn ddl_exact_policy_iteration(
    env: &dyn Env,
    goal: State,
    gamma: f64,
    max_rounds: usize,
    start: StationaryPolicy,
) -> Result<PolicyIterationReport> {
    if !env.is_deterministic() {
        return Err(DdlError::Unsupported("exact DDL policy iteration needs a deterministic env"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(DdlError::config("gamma", "must be in [0, 1)"));
    }
    let n = finite_state_count(env)?;
    let states = env.enumerate_states()?;
    let bfs = bfs_to(env, goal)?;
    let a_count = env.spec().action_count;
    let next: Vec<Vec<State>> = (0..n)
        .map(|s| {
            if states.binary_search(&s).is_ok() {
                (0..a_count).map(|a| env.afterstate(s, a)).collect::<Result<Vec<_>>>()
            } else {
                Ok(vec![s; a_count])
            }
        })
        .collect::<Result<_>>()?;

    let mut rounds = vec![PolicyRound {
        distances: hitting_distances(env, &start, goal)?,
        policy: start,
    }];
    let mut violations = Vec::new();
    let mut converged = false;
    for r in 0..max_rounds {
        let prev = &rounds[r].distances;
        let cap = prev.iter().flatten().cloned().fold(0.0, f64::max) + 1.0;
        let reward: Vec<f64> = prev.iter().map(|d| -d.unwrap_or(cap)).collect();
        let actions = optimize(&next, &states, goal, &reward, gamma);
        let policy = StationaryPolicy::deterministic(&actions, a_count);
        let distances = hitting_distances(env, &policy, goal)?;
        for &s in &states {
            let worse = match (prev[s], distances[s]) {
                (Some(a), Some(b)) => b > a + TOL * (1.0 + a),
                (Some(_), None) => true,
                _ => false,
            };
            if worse {
                violations.push((r + 1, s));
            }
        }
        let same = states.iter().all(|&s| match (prev[s], distances[s]) {
            (Some(a), Some(b)) => (a - b).abs() <= TOL * (1.0 + a),
            (None, None) => true,
            _ => false,
        });
        rounds.push(PolicyRound { policy, distances });
        if same {
            converged = true;
            break;
        }
    }
    let last = &rounds.last().expect("at least the start round").distances;
    let fixpoint_matches_bfs = converged && states.iter().all(|&s| last[s] == bfs[s].map(|d| d as f64));
    Ok(PolicyIterationReport {
        goal,
        rounds,
        monotonicity_violations: violations,
        converged,
        fixpoint_matches_bfs,
        bfs,
    })
}

/// Optimal deterministic policy for reward `reward[s]` paid in every
/// non-goal state, goal terminal with value 0. Exact policy iteration;
/// the returned policy is greedy with respect to the optimal values with
/// lowest-index tie-breaking.
fn optimize(next: &[Vec<State>], states: &[State], goal: State, reward: &[f64], gamma: f64) -> Vec<Action> {
    let n = next.len();
    let mut actions = vec![0; n];
    let mut v = evaluate(next, &actions, goal, reward, gamma);
    // every improvement step is strict, so this terminates
    loop {
        let mut changed = false;
        for &s in states {
            if s == goal {
                continue;
            }
            let q = |a: Action| reward[s] + gamma * v[next[s][a]];
            let current = q(actions[s]);
            let (best_a, best_q) = (0..next[s].len())
                .map(|a| (a, q(a)))
                .fold((actions[s], current), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best_q > current + TOL * (1.0 + current.abs()) {
                actions[s] = best_a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        v = evaluate(next, &actions, goal, reward, gamma);
    }
    for &s in states {
        if s == goal {
            continue;
        }
        let qs: Vec<f64> = (0..next[s].len()).map(|a| reward[s] + gamma * v[next[s][a]]).collect();
        let best = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        actions[s] = qs
            .iter()
            .position(|&q| q >= best - TOL * (1.0 + best.abs()))
            .expect("nonempty action set");
    }
    actions
}

/// `V = r + gamma P V` for a deterministic policy, `V(goal) = 0`.
fn evaluate(next: &[Vec<State>], actions: &[Action], goal: State, reward: &[f64], gamma: f64) -> Vec<f64> {
    let n = next.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        if s == goal {
            continue;
        }
        b[s] = reward[s];
        let t = next[s][actions[s]];
        if t != goal {
            a[(s, t)] -= gamma;
        }
    }
    let v = a.lu().solve(&b).expect("I - gamma P is nonsingular for gamma < 1");
    v.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RandomDeterministicMdp;

    #[test]
    fn uniform_start_converges_to_bfs() {
        let mdp = RandomDeterministicMdp::generate(11, 10, 3, 30).unwrap();
        let start = StationaryPolicy::uniform(10, 3);
        let report = ddl_exact_policy_iteration(&mdp, mdp.goal(), 0.99, 50, start).unwrap();
        assert!(report.passed(), "{report:?}");
        let last = &report.rounds.last().unwrap().distances;
        for s in 0..10 {
            assert_eq!(last[s], report.bfs[s].map(|d| d as f64));
        }
    }

    #[test]
    fn optimal_start_is_immediate_fixpoint() {
        let mdp = RandomDeterministicMdp::generate(3, 10, 3, 30).unwrap();
        let bfs = bfs_to(&mdp, mdp.goal()).unwrap();
        let actions: Vec<Action> = (0..10)
            .map(|s| {
                if s == mdp.goal() {
                    return 0;
                }
                (0..3)
                    .find(|&a| bfs[mdp.next(s, a)].map(|d| d + 1) == bfs[s])
                    .unwrap()
            })
            .collect();
        let report = ddl_exact_policy_iteration(
            &mdp,
            mdp.goal(),
            0.99,
            10,
            StationaryPolicy::deterministic(&actions, 3),
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.rounds.len(), 2);
    }

    #[test]
    fn stuck_start_policy_still_converges() {
        // start policy that never reaches the goal from anywhere but the goal
        let mdp = RandomDeterministicMdp::generate(5, 8, 2, 30).unwrap();
        let self_or_zero: Vec<Action> = vec![0; 8];
        let report =
            ddl_exact_policy_iteration(&mdp, mdp.goal(), 0.9, 50, StationaryPolicy::deterministic(&self_or_zero, 2))
                .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn rejects_stochastic_env() {
        let env = crate::env::PathologicalMdp::new(0.5, 5).unwrap();
        let r = ddl_exact_policy_iteration(&env, 4, 0.9, 5, StationaryPolicy::uniform(6, 2));
        assert!(matches!(r, Err(DdlError::Unsupported(_))));
    }
}
