use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{argmin, Actor, QPolicy};
use crate::distance::DistanceEstimator;
use crate::env::{Action, Env, State};
use crate::error::{DdlError, Result};
use crate::trajectory::TrajectoryPool;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImproveConfig {
    /// Discount, strictly below one.
    pub gamma: f64,
    /// Number of minibatch updates (`N_pi`).
    pub updates: usize,
    pub batch_size: usize,
    /// Episode horizon; bounds the bootstrap value of absorbing states.
    pub horizon: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImproveStats {
    pub updates: usize,
    pub mean_abs_td_error: f64,
    /// False when no replayed state has a trained distance to the goal; the
    /// reward is then the `d_max` prior everywhere and the update is blind.
    pub goal_in_support: bool,
}

/// Q-learning toward `goal` on replayed transitions with reward
/// `r(s) = -d(s, goal)`.
pub fn improve(
    policy: &mut QPolicy,
    distance: &dyn DistanceEstimator,
    goal: State,
    env: &dyn Env,
    replay: &TrajectoryPool,
    config: &ImproveConfig,
    rng: &mut dyn RngCore,
) -> Result<ImproveStats> {
    let n = policy.state_count();
    // One prediction per state; far cheaper than per sampled transition.
    let rewards: Vec<f64> = (0..n).map(|s| -distance.predict(s, goal)).collect();
    let support = replay.states().any(|s| distance.has_support(s, goal));
    let mut stats = q_learning(policy, goal, env, replay, config, rng, &rewards)?;
    stats.goal_in_support = support;
    Ok(stats)
}

/// Same update with the sparse reward `-1` on every non-goal step.
pub fn sparse_reward_improve(
    policy: &mut QPolicy,
    goal: State,
    env: &dyn Env,
    replay: &TrajectoryPool,
    config: &ImproveConfig,
    rng: &mut dyn RngCore,
) -> Result<ImproveStats> {
    let rewards = vec![-1.0; policy.state_count()];
    let support = replay.states().any(|s| s == goal);
    let mut stats = q_learning(policy, goal, env, replay, config, rng, &rewards)?;
    stats.goal_in_support = support;
    Ok(stats)
}

fn q_learning(
    policy: &mut QPolicy,
    goal: State,
    env: &dyn Env,
    replay: &TrajectoryPool,
    config: &ImproveConfig,
    rng: &mut dyn RngCore,
    rewards: &[f64],
) -> Result<ImproveStats> {
    if !(0.0..1.0).contains(&config.gamma) {
        return Err(DdlError::config("gamma", "must be in [0, 1)"));
    }
    let transitions: Vec<(State, Action, State)> = replay.iter().flat_map(|t| t.transitions()).collect();
    if transitions.is_empty() || config.updates == 0 {
        return Ok(ImproveStats::default());
    }
    let gamma = config.gamma;
    // An absorbing non-goal state keeps paying its reward for the rest of
    // the horizon.
    let tail = (1.0 - gamma.powi(config.horizon as i32)) / (1.0 - gamma);
    let lr = policy.learning_rate();
    let a_count = policy.action_count();
    let table = policy.table_mut(goal);
    let mut err_sum = 0.0;
    let mut count = 0usize;
    for _ in 0..config.updates {
        for _ in 0..config.batch_size.max(1) {
            let (s, a, next) = transitions[rng.gen_range(0..transitions.len())];
            if s == goal {
                continue;
            }
            let r = rewards[s];
            let target = if next == goal {
                r
            } else if env.is_absorbing(next) {
                r + gamma * rewards[next] * tail
            } else {
                let row = &table[next * a_count..(next + 1) * a_count];
                r + gamma * row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            };
            let q = &mut table[s * a_count + a];
            let err = target - *q;
            *q += lr * err;
            err_sum += err.abs();
            count += 1;
        }
    }
    Ok(ImproveStats {
        updates: count,
        mean_abs_td_error: if count > 0 { err_sum / count as f64 } else { 0.0 },
        goal_in_support: false,
    })
}

/// One-step lookahead: the action whose afterstate has the smallest
/// estimated distance to `goal` (zero if it is the goal). Ties go to the
/// lowest action index.
pub fn greedy_step_baseline(
    distance: &dyn DistanceEstimator,
    env: &dyn Env,
    state: State,
    goal: State,
) -> Result<Action> {
    let mut scores = Vec::with_capacity(env.spec().action_count);
    for a in 0..env.spec().action_count {
        let next = env.afterstate(state, a)?;
        scores.push(if next == goal { 0.0 } else { distance.predict(next, goal) });
    }
    Ok(argmin(&scores))
}

/// Epsilon-greedy actor over [`greedy_step_baseline`]. Falls back to a
/// uniform action where the afterstate is not available.
pub struct GreedyDistanceActor<'a> {
    pub distance: &'a dyn DistanceEstimator,
    pub env: &'a dyn Env,
    pub epsilon: f64,
}

impl Actor for GreedyDistanceActor<'_> {
    fn act(&self, state: State, goal: Option<State>, rng: &mut dyn RngCore) -> Action {
        let a_count = self.env.spec().action_count;
        let Some(goal) = goal else {
            return rng.gen_range(0..a_count);
        };
        if rng.gen::<f64>() < self.epsilon {
            return rng.gen_range(0..a_count);
        }
        greedy_step_baseline(self.distance, self.env, state, goal).unwrap_or_else(|_| rng.gen_range(0..a_count))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::TabularDistance;
    use crate::env::{GridMaze, MazeAction, PathologicalMdp, PathologicalState, RandomDeterministicMdp};
    use crate::policy::{rollout, Greedy, PolicyKind, RolloutConfig, UniformActor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_pool(env: &dyn Env, episodes: usize, rng: &mut ChaCha8Rng) -> TrajectoryPool {
        let mut pool = TrajectoryPool::new(1_000_000);
        let actor = UniformActor {
            action_count: env.spec().action_count,
        };
        let cfg = RolloutConfig {
            stop_at_goal: false,
            ..RolloutConfig::new(env.spec().horizon)
        };
        for k in 0..episodes {
            pool.push(rollout(env, &actor, None, &cfg, rng).unwrap(), k as u64);
        }
        pool
    }

    fn cfg(updates: usize, horizon: usize) -> ImproveConfig {
        ImproveConfig {
            gamma: 0.99,
            updates,
            batch_size: 64,
            horizon,
        }
    }

    #[test]
    fn exact_distances_give_shortest_path_policy() {
        let maze = GridMaze::corridor(6, 12).unwrap().with_uniform_start();
        let mut d = TabularDistance::new(6, 20.0);
        for s in 0..6usize {
            for t in 0..6usize {
                d.set(s, t, s.abs_diff(t) as f64);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pool = uniform_pool(&maze, 200, &mut rng);
        let mut p = QPolicy::for_env(&maze, PolicyKind::EpsilonGreedy { epsilon: 0.0 }, 0.5, 0.0).unwrap();
        let stats = improve(&mut p, &d, 5, &maze, &pool, &cfg(2000, 12), &mut rng).unwrap();
        assert!(stats.goal_in_support);
        for s in 0..5 {
            assert_eq!(p.greedy_action(s, 5), MazeAction::Right as usize, "state {s}");
        }
        let t = crate::policy::rollout_from(&maze, &Greedy(&p), 0, Some(5), &RolloutConfig::evaluation(12), &mut rng).unwrap();
        assert_eq!(t.len(), 5);
    }

    #[test]
    fn sparse_reward_values_bounded_below() {
        // goal 0 is unreachable from the rest of a chain
        let mdp = RandomDeterministicMdp::chain(6, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pool = uniform_pool(&mdp, 100, &mut rng);
        let mut p = QPolicy::for_env(&mdp, PolicyKind::EpsilonGreedy { epsilon: 0.1 }, 0.5, 0.0).unwrap();
        let c = cfg(3000, 10);
        let stats = sparse_reward_improve(&mut p, 0, &mdp, &pool, &c, &mut rng).unwrap();
        assert!(stats.updates > 0);
        let floor = -1.0 / (1.0 - c.gamma);
        for s in 1..6 {
            for q in p.q_values(s, 0) {
                assert!(q >= floor - 1e-9 && q <= 0.0, "{q}");
            }
        }
    }

    #[test]
    fn sparse_reward_learns_reachable_goal() {
        let maze = GridMaze::corridor(5, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pool = uniform_pool(&maze, 100, &mut rng);
        let mut p = QPolicy::for_env(&maze, PolicyKind::EpsilonGreedy { epsilon: 0.0 }, 0.5, 0.0).unwrap();
        sparse_reward_improve(&mut p, 4, &maze, &pool, &cfg(3000, 10), &mut rng).unwrap();
        for s in 0..4 {
            assert_eq!(p.greedy_action(s, 4), MazeAction::Right as usize);
        }
    }

    #[test]
    fn empty_replay_is_a_no_op() {
        let maze = GridMaze::corridor(3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = QPolicy::for_env(&maze, PolicyKind::EpsilonGreedy { epsilon: 0.0 }, 0.5, 0.0).unwrap();
        let d = TabularDistance::new(3, 10.0);
        let stats = improve(&mut p, &d, 2, &maze, &TrajectoryPool::new(10), &cfg(5, 5), &mut rng).unwrap();
        assert_eq!(stats.updates, 0);
        assert!(!stats.goal_in_support);
    }

    #[test]
    fn rejects_undiscounted() {
        let maze = GridMaze::corridor(3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pool = uniform_pool(&maze, 2, &mut rng);
        let mut p = QPolicy::for_env(&maze, PolicyKind::EpsilonGreedy { epsilon: 0.0 }, 0.5, 0.0).unwrap();
        let mut c = cfg(5, 5);
        c.gamma = 1.0;
        assert!(sparse_reward_improve(&mut p, 2, &maze, &pool, &c, &mut rng).is_err());
    }

    #[test]
    fn greedy_lookahead_picks_risky_branch() {
        // conditional distances look only at successful episodes: the risky
        // branch is one step shorter whatever p is
        let mut d = TabularDistance::new(6, 20.0);
        let goal = PathologicalState::Goal as usize;
        d.set(PathologicalState::RiskyMid as usize, goal, 1.0);
        d.set(PathologicalState::SafeMid1 as usize, goal, 2.0);
        d.set(PathologicalState::SafeMid2 as usize, goal, 1.0);
        for p in [0.01, 0.5, 0.99] {
            let env = PathologicalMdp::new(p, 10).unwrap();
            let a = greedy_step_baseline(&d, &env, PathologicalState::S0 as usize, goal).unwrap();
            assert_eq!(a, PathologicalMdp::RISKY);
        }
    }

    #[test]
    fn greedy_lookahead_needs_afterstates() {
        let env = PathologicalMdp::new(0.5, 10).unwrap();
        let d = TabularDistance::new(6, 20.0);
        assert!(env.afterstate(PathologicalState::S0 as usize, 0).is_ok());
        let err = greedy_step_baseline(&d, &env, PathologicalState::RiskyMid as usize, 4);
        assert!(matches!(err, Err(DdlError::Unsupported(_))));
    }
}
