use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{simulate, StationaryPolicy};
use crate::env::{Action, Env, State};
use crate::error::{DdlError, Result};

/// Both sides of the cumulative-distance identity
/// `-E[sum_t g^t d_t] = -E[sum_t g^t (t + 1) 1(s_t)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// Nested form: discounted sum of freshly rolled-out inner distances.
    pub lhs: f64,
    /// Collapsed form.
    pub rhs: f64,
    pub diff: f64,
    /// Standard error of `diff` (0 when exact).
    pub std_err: f64,
    pub exact: bool,
}

impl IdentityReport {
    /// Exact: `|diff| < 1e-9`; Monte Carlo: `|diff| <= 4 SE`.
    pub fn agrees(&self) -> bool {
        if self.exact {
            self.diff.abs() < 1e-9
        } else {
            self.diff.abs() <= 4.0 * self.std_err
        }
    }
}

/// Evaluates both forms over episodes of at most `horizon` steps. The
/// nested form re-rolls an independent continuation from every `(s_t, a_t)`
/// for the remaining `horizon - t` steps. The indicator is 0 at the goal and
/// at absorbing states, where episodes end.
///
/// Deterministic env and policy are evaluated exactly over the initial
/// distribution; otherwise with `mc_samples` paired episodes.
pub fn cumulative_identity_check(
    env: &dyn Env,
    policy: &StationaryPolicy,
    goal: State,
    gamma: f64,
    horizon: usize,
    mc_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<IdentityReport> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(DdlError::config("gamma", "must be in [0, 1]"));
    }
    let exact = env.is_deterministic() && policy.is_deterministic();
    let mut sum_l = 0.0;
    let mut sum_r = 0.0;
    let mut diffs = Vec::new();
    if exact {
        for (s0, w) in env.initial_distribution() {
            let (l, r) = one_episode(env, policy, s0, goal, gamma, horizon, rng)?;
            sum_l += w * l;
            sum_r += w * r;
        }
    } else {
        if mc_samples < 2 {
            return Err(DdlError::config("mc_samples", "need at least 2 samples"));
        }
        for _ in 0..mc_samples {
            let s0 = env.reset(rng);
            let (l, r) = one_episode(env, policy, s0, goal, gamma, horizon, rng)?;
            sum_l += l;
            sum_r += r;
            diffs.push(l - r);
        }
        sum_l /= mc_samples as f64;
        sum_r /= mc_samples as f64;
    }
    let std_err = if exact {
        0.0
    } else {
        let m = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / m;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    };
    Ok(IdentityReport {
        lhs: -sum_l,
        rhs: -sum_r,
        diff: sum_r - sum_l,
        std_err,
        exact,
    })
}

fn indicator(env: &dyn Env, s: State, goal: State) -> f64 {
    if s == goal || env.is_absorbing(s) {
        0.0
    } else {
        1.0
    }
}

/// Returns the (positive) nested and collapsed sums for one outer episode.
fn one_episode(
    env: &dyn Env,
    policy: &StationaryPolicy,
    s0: State,
    goal: State,
    gamma: f64,
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    let (states, actions) = simulate(env, policy, s0, Some(goal), horizon, rng)?;
    let mut collapsed = 0.0;
    let mut nested = 0.0;
    for t in 0..horizon.min(states.len()) {
        let s = states[t];
        collapsed += gamma.powi(t as i32) * (t + 1) as f64 * indicator(env, s, goal);
        let inner = inner_distance(env, policy, s, actions.get(t).copied(), goal, gamma, horizon - t, rng)?;
        nested += gamma.powi(t as i32) * inner;
    }
    Ok((nested, collapsed))
}

/// `sum_{k < remaining} g^k 1(s'_k)` for a fresh continuation with
/// `s'_0 = s` and first action `a`.
fn inner_distance(
    env: &dyn Env,
    policy: &StationaryPolicy,
    s: State,
    first_action: Option<Action>,
    goal: State,
    gamma: f64,
    remaining: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let mut total = indicator(env, s, goal);
    if total == 0.0 || remaining <= 1 {
        return Ok(total);
    }
    let Some(a) = first_action else {
        return Ok(total);
    };
    let mut cur = env.step(s, a, rng)?.next_state;
    for k in 1..remaining {
        let ind = indicator(env, cur, goal);
        if ind == 0.0 {
            break;
        }
        total += gamma.powi(k as i32) * ind;
        if k + 1 < remaining {
            let a = policy.sample(cur, rng);
            cur = env.step(cur, a, rng)?.next_state;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridMaze, PathologicalMdp, RandomDeterministicMdp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn k_step_path_undiscounted() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 1..6usize {
            let mdp = RandomDeterministicMdp::chain(k + 1, 50).unwrap();
            let r = cumulative_identity_check(&mdp, &StationaryPolicy::deterministic(&vec![0; k + 1], 1), k, 1.0, 50, 0, &mut rng)
                .unwrap();
            let expect = -((k * (k + 1)) as f64) / 2.0;
            assert!(r.exact);
            assert!((r.lhs - expect).abs() < 1e-12 && (r.rhs - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn three_steps_is_minus_six() {
        let mdp = RandomDeterministicMdp::chain(4, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = cumulative_identity_check(&mdp, &StationaryPolicy::deterministic(&[0; 4], 1), 3, 1.0, 10, 0, &mut rng).unwrap();
        assert_eq!(r.rhs, -6.0);
        assert!(r.agrees());
    }

    #[test]
    fn pathological_half_matches_within_mc_error() {
        let env = PathologicalMdp::new(0.5, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = cumulative_identity_check(&env, &StationaryPolicy::uniform(6, 2), 4, 0.99, 20, 20_000, &mut rng).unwrap();
        assert!(!r.exact);
        assert!(r.agrees(), "{r:?}");
    }

    #[test]
    fn uniform_maze_policy_matches() {
        let maze = GridMaze::open(3, 3, (0, 0), 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = cumulative_identity_check(&maze, &StationaryPolicy::uniform(9, 5), 8, 0.95, 12, 5_000, &mut rng).unwrap();
        assert!(r.agrees(), "{r:?}");
        assert!(r.std_err > 0.0);
    }
}
