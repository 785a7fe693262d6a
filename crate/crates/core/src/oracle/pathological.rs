use serde::{Deserialize, Serialize};

use super::{conditional_hitting_distances, policy_transitions, StationaryPolicy};
use crate::env::{finite_state_count, Env, PathologicalMdp, PathologicalState, State};
use crate::error::{DdlError, Result};
use crate::policy::argmin;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchChoice {
    Risky,
    Safe,
}

impl BranchChoice {
    fn of_action(a: usize) -> Self {
        if a == PathologicalMdp::RISKY {
            BranchChoice::Risky
        } else {
            BranchChoice::Safe
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub p: f64,
    /// One-step descent on the conditional distance.
    pub greedy: BranchChoice,
    /// Minimizer of the expected discounted cumulative distance.
    pub cumulative: BranchChoice,
    pub risky_cost: f64,
    pub safe_cost: f64,
}

/// Expected `sum_{t < horizon} gamma^t cost(s_t)` from `start` under
/// `policy`, computed by propagating the state distribution. The goal ends
/// the episode and costs nothing; other absorbing states keep paying their
/// cost until the horizon.
pub fn finite_horizon_cost(
    env: &dyn Env,
    start: State,
    policy: &StationaryPolicy,
    cost: &[f64],
    goal: State,
    gamma: f64,
    horizon: usize,
) -> Result<f64> {
    let n = finite_state_count(env)?;
    if cost.len() != n {
        return Err(DdlError::ShapeMismatch {
            expected: format!("{n} costs"),
            got: cost.len().to_string(),
        });
    }
    let rows = policy_transitions(env, policy)?;
    let mut dist = vec![0.0; n];
    dist[start] = 1.0;
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let mut step_cost = 0.0;
        let mut next = vec![0.0; n];
        for s in 0..n {
            if dist[s] == 0.0 || s == goal {
                continue;
            }
            step_cost += dist[s] * cost[s];
            for &(t, p) in &rows[s] {
                next[t] += dist[s] * p;
            }
        }
        total += discount * step_cost;
        discount *= gamma;
        dist = next;
    }
    Ok(total)
}

/// Conditional distances to the goal under the uniform data-collecting
/// policy, with `d_max` for states that never reach it.
fn distance_column(env: &PathologicalMdp, d_max: f64) -> Result<Vec<f64>> {
    let d = conditional_hitting_distances(env, &StationaryPolicy::uniform(PathologicalMdp::STATE_COUNT, 2), env.goal())?;
    let mut d: Vec<f64> = d.into_iter().map(|x| x.unwrap_or(d_max)).collect();
    d[env.goal()] = 0.0;
    Ok(d)
}

fn branch_costs(env: &PathologicalMdp, d: &[f64], gamma: f64, horizon: usize) -> Result<(f64, f64)> {
    let cost = |first: usize| {
        let mut actions = vec![0; PathologicalMdp::STATE_COUNT];
        actions[PathologicalState::S0 as usize] = first;
        let policy = StationaryPolicy::deterministic(&actions, 2);
        finite_horizon_cost(env, PathologicalState::S0 as usize, &policy, d, env.goal(), gamma, horizon)
    };
    Ok((cost(PathologicalMdp::RISKY)?, cost(PathologicalMdp::SAFE)?))
}

/// Greedy versus cumulative branch choice at `s0` for each `p`.
pub fn pathological_branch_analysis(p_grid: &[f64], gamma: f64, d_max: f64, horizon: usize) -> Result<Vec<BranchRow>> {
    p_grid
        .iter()
        .map(|&p| {
            let env = PathologicalMdp::new(p, horizon)?;
            let d = distance_column(&env, d_max)?;
            let s0 = PathologicalState::S0 as usize;
            let after: Vec<f64> = (0..2)
                .map(|a| env.afterstate(s0, a).map(|t| d[t]))
                .collect::<Result<_>>()?;
            let (risky_cost, safe_cost) = branch_costs(&env, &d, gamma, horizon)?;
            let cumulative = argmin(&[risky_cost, safe_cost]);
            Ok(BranchRow {
                p,
                greedy: BranchChoice::of_action(argmin(&after)),
                cumulative: BranchChoice::of_action(cumulative),
                risky_cost,
                safe_cost,
            })
        })
        .collect()
}

/// Smallest `p` at which the cumulative objective prefers the risky
/// branch, by bisection on the exact branch costs.
pub fn pathological_crossover(gamma: f64, d_max: f64, horizon: usize) -> Result<f64> {
    let prefers_risky = |p: f64| -> Result<bool> {
        let row = pathological_branch_analysis(&[p], gamma, d_max, horizon)?[0];
        Ok(row.cumulative == BranchChoice::Risky)
    };
    if !prefers_risky(1.0)? {
        return Ok(f64::INFINITY);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if prefers_risky(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
