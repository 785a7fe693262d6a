use nalgebra::{DMatrix, DVector};

use super::{policy_transitions, StationaryPolicy};
use crate::env::{finite_state_count, Env, State};
use crate::error::{DdlError, Result};

/// Expected number of steps to first reach `goal` under `policy`; `None`
/// where the goal is not reached almost surely.
///
/// Deterministic env and policy are handled by path following, so finite
/// values are exact integers.
pub fn hitting_distances(env: &dyn Env, policy: &StationaryPolicy, goal: State) -> Result<Vec<Option<f64>>> {
    if env.is_deterministic() {
        if let Some(actions) = policy.as_deterministic() {
            return follow_paths(env, &actions, goal);
        }
    }
    let (h, m) = absorption(env, policy, goal)?;
    Ok(h.iter()
        .zip(&m)
        .map(|(&h, &m)| if h > 1.0 - 1e-12 { Some(m) } else { None })
        .collect())
}

/// Expected steps to reach `goal` conditioned on reaching it; `None` where
/// the goal is unreachable.
pub fn conditional_hitting_distances(
    env: &dyn Env,
    policy: &StationaryPolicy,
    goal: State,
) -> Result<Vec<Option<f64>>> {
    let (h, m) = absorption(env, policy, goal)?;
    Ok(h.iter()
        .zip(&m)
        .map(|(&h, &m)| if h > 1e-15 { Some(m / h) } else { None })
        .collect())
}

fn follow_paths(env: &dyn Env, actions: &[usize], goal: State) -> Result<Vec<Option<f64>>> {
    let n = finite_state_count(env)?;
    let mut out = vec![None; n];
    for s0 in env.enumerate_states()? {
        let mut s = s0;
        for steps in 0..=n {
            if s == goal {
                out[s0] = Some(steps as f64);
                break;
            }
            s = env.afterstate(s, actions[s])?;
        }
    }
    Ok(out)
}

/// Reach probabilities `h(s)` and `m(s) = E[tau; reached]`.
fn absorption(env: &dyn Env, policy: &StationaryPolicy, goal: State) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = finite_state_count(env)?;
    if goal >= n {
        return Err(DdlError::InvalidState(goal));
    }
    let rows = policy_transitions(env, policy)?;
    // states that reach the goal with positive probability
    let mut can_reach = vec![false; n];
    can_reach[goal] = true;
    loop {
        let mut changed = false;
        for s in 0..n {
            if !can_reach[s] && rows[s].iter().any(|&(t, p)| p > 0.0 && can_reach[t]) {
                can_reach[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let transient: Vec<State> = (0..n).filter(|&s| s != goal && can_reach[s]).collect();
    let mut index = vec![usize::MAX; n];
    for (i, &s) in transient.iter().enumerate() {
        index[s] = i;
    }
    let k = transient.len();
    let mut h = vec![0.0; n];
    let mut m = vec![0.0; n];
    h[goal] = 1.0;
    if k == 0 {
        return Ok((h, m));
    }
    let mut a = DMatrix::<f64>::identity(k, k);
    let mut to_goal = DVector::<f64>::zeros(k);
    for (i, &s) in transient.iter().enumerate() {
        for &(t, p) in &rows[s] {
            if t == goal {
                to_goal[i] += p;
            } else if index[t] != usize::MAX {
                a[(i, index[t])] -= p;
            }
        }
    }
    let lu = a.lu();
    let h_r = lu
        .solve(&to_goal)
        .ok_or(DdlError::Unsupported("singular absorption system"))?;
    let m_r = lu
        .solve(&h_r)
        .ok_or(DdlError::Unsupported("singular absorption system"))?;
    for (i, &s) in transient.iter().enumerate() {
        h[s] = h_r[i].clamp(0.0, 1.0);
        m[s] = m_r[i];
    }
    Ok((h, m))
}
