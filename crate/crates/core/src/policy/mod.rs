//! Goal-conditioned tabular policies, rollouts, and policy improvement
//! against distance-derived rewards.

mod improve;

pub use improve::{
    greedy_step_baseline, improve, sparse_reward_improve, GreedyDistanceActor, ImproveConfig,
    ImproveStats,
};

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, State};
use crate::error::{DdlError, Result};
use crate::trajectory::Trajectory;

/// Anything that picks actions for a goal.
pub trait Actor {
    fn act(&self, state: State, goal: Option<State>, rng: &mut dyn RngCore) -> Action;
}

/// Uniform over `0..action_count`.
#[derive(Debug, Clone, Copy)]
pub struct UniformActor {
    pub action_count: usize,
}

impl Actor for UniformActor {
    fn act(&self, _state: State, _goal: Option<State>, rng: &mut dyn RngCore) -> Action {
        rng.gen_range(0..self.action_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    EpsilonGreedy { epsilon: f64 },
    Softmax { temperature: f64 },
}

/// Goal-conditioned tabular Q policy: one `state x action` table per goal,
/// created on first use.
#[derive(Debug, Clone, PartialEq)]
pub struct QPolicy {
    state_count: usize,
    action_count: usize,
    kind: PolicyKind,
    learning_rate: f64,
    q_init: f64,
    tables: BTreeMap<State, Vec<f64>>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

impl QPolicy {
    pub fn new(state_count: usize, action_count: usize, kind: PolicyKind, learning_rate: f64, q_init: f64) -> Self {
        QPolicy {
            state_count,
            action_count,
            kind,
            learning_rate,
            q_init,
            tables: BTreeMap::new(),
        }
    }

    pub fn for_env(env: &dyn Env, kind: PolicyKind, learning_rate: f64, q_init: f64) -> Result<Self> {
        let n = crate::env::finite_state_count(env)?;
        Ok(Self::new(n, env.spec().action_count, kind, learning_rate, q_init))
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn set_kind(&mut self, kind: PolicyKind) {
        self.kind = kind;
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn goals(&self) -> impl Iterator<Item = State> + '_ {
        self.tables.keys().copied()
    }

    pub fn has_goal(&self, goal: State) -> bool {
        self.tables.contains_key(&goal)
    }

    /// Q-values of `state` for `goal`; untouched entries read as `q_init`.
    pub fn q_values(&self, state: State, goal: State) -> Vec<f64> {
        match self.tables.get(&goal) {
            Some(t) => t[state * self.action_count..(state + 1) * self.action_count].to_vec(),
            None => vec![self.q_init; self.action_count],
        }
    }

    pub(crate) fn table_mut(&mut self, goal: State) -> &mut Vec<f64> {
        let size = self.state_count * self.action_count;
        let init = self.q_init;
        self.tables.entry(goal).or_insert_with(|| vec![init; size])
    }

    pub fn set_q(&mut self, state: State, goal: State, action: Action, value: f64) {
        let a = self.action_count;
        self.table_mut(goal)[state * a + action] = value;
    }

    pub fn greedy_action(&self, state: State, goal: State) -> Action {
        argmax(&self.q_values(state, goal))
    }

    /// Action distribution at `state`; uniform when there is no goal.
    pub fn action_probs(&self, state: State, goal: Option<State>) -> Vec<f64> {
        let a = self.action_count;
        let Some(goal) = goal else {
            return vec![1.0 / a as f64; a];
        };
        let q = self.q_values(state, goal);
        match self.kind {
            PolicyKind::EpsilonGreedy { epsilon } => {
                let mut p = vec![epsilon / a as f64; a];
                p[argmax(&q)] += 1.0 - epsilon;
                p
            }
            PolicyKind::Softmax { temperature } if temperature <= 0.0 => {
                let mut p = vec![0.0; a];
                p[argmax(&q)] = 1.0;
                p
            }
            PolicyKind::Softmax { temperature } => {
                let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = q.iter().map(|v| ((v - max) / temperature).exp()).collect();
                let z: f64 = w.iter().sum();
                w.into_iter().map(|v| v / z).collect()
            }
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let (kind, param) = match self.kind {
            PolicyKind::EpsilonGreedy { epsilon } => ("epsilon_greedy", epsilon),
            PolicyKind::Softmax { temperature } => ("softmax", temperature),
        };
        let param_name = if kind == "softmax" { "temperature" } else { "epsilon" };
        writeln!(
            w,
            "# policy v1 kind={kind} {param_name}={param} learning_rate={} q_init={} states={} actions={}",
            self.learning_rate, self.q_init, self.state_count, self.action_count
        )?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["goal", "state", "action", "q"])?;
        for (goal, table) in &self.tables {
            for s in 0..self.state_count {
                for a in 0..self.action_count {
                    let q = table[s * self.action_count + a];
                    if q != self.q_init {
                        csv.write_record([goal.to_string(), s.to_string(), a.to_string(), q.to_string()])?;
                    }
                }
            }
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let (header, body) = text
            .split_once('\n')
            .ok_or_else(|| DdlError::Parse("missing policy header".into()))?;
        let rest = header
            .strip_prefix("# policy v1")
            .ok_or_else(|| DdlError::Parse("not a policy checkpoint".into()))?;
        let mut fields = BTreeMap::new();
        for field in rest.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| DdlError::Parse(format!("bad header field {field:?}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let num = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| DdlError::Parse(format!("policy header missing {k}")))
        };
        let kind = match fields.get("kind").map(String::as_str) {
            Some("epsilon_greedy") => PolicyKind::EpsilonGreedy { epsilon: num("epsilon")? },
            Some("softmax") => PolicyKind::Softmax { temperature: num("temperature")? },
            _ => return Err(DdlError::Parse("unknown policy kind".into())),
        };
        let mut policy = QPolicy::new(
            num("states")? as usize,
            num("actions")? as usize,
            kind,
            num("learning_rate")?,
            num("q_init")?,
        );
        let mut csv = csv::Reader::from_reader(body.as_bytes());
        for row in csv.records() {
            let row = row?;
            let field = |k: usize| row.get(k).ok_or_else(|| DdlError::Parse("short policy row".into()));
            let bad = |_| DdlError::Parse("bad policy row".into());
            let goal: usize = field(0)?.parse().map_err(bad)?;
            let s: usize = field(1)?.parse().map_err(bad)?;
            let a: usize = field(2)?.parse().map_err(bad)?;
            let q: f64 = field(3)?.parse().map_err(|_| DdlError::Parse("bad q".into()))?;
            if s >= policy.state_count || goal >= policy.state_count {
                return Err(DdlError::InvalidState(s.max(goal)));
            }
            if a >= policy.action_count {
                return Err(DdlError::InvalidAction {
                    action: a,
                    action_count: policy.action_count,
                });
            }
            policy.set_q(s, goal, a, q);
        }
        Ok(policy)
    }
}

impl Actor for QPolicy {
    fn act(&self, state: State, goal: Option<State>, rng: &mut dyn RngCore) -> Action {
        let probs = self.action_probs(state, goal);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        probs.len() - 1
    }
}

/// Greedy view of a [`QPolicy`]: no exploration noise.
#[derive(Debug, Clone, Copy)]
pub struct Greedy<'a>(pub &'a QPolicy);

impl Actor for Greedy<'_> {
    fn act(&self, state: State, goal: Option<State>, rng: &mut dyn RngCore) -> Action {
        match goal {
            Some(g) => self.0.greedy_action(state, g),
            None => rng.gen_range(0..self.0.action_count),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub horizon: usize,
    /// Actions from step `floor(fraction * horizon)` on are uniform random.
    pub explore_switch_fraction: f64,
    pub stop_at_goal: bool,
    /// When not stopping at the goal, act uniformly at random once the goal
    /// has been reached.
    pub explore_after_goal: bool,
    /// Optional hard cap below the horizon (used to cut episodes at
    /// preference-query boundaries). The exploration switch still refers to
    /// `horizon`.
    pub max_steps: Option<usize>,
}

impl RolloutConfig {
    pub fn new(horizon: usize) -> Self {
        RolloutConfig {
            horizon,
            explore_switch_fraction: 0.9,
            stop_at_goal: true,
            explore_after_goal: true,
            max_steps: None,
        }
    }

    /// Greedy evaluation: no exploration tail, stop at the goal.
    pub fn evaluation(horizon: usize) -> Self {
        RolloutConfig {
            explore_switch_fraction: 1.0,
            ..Self::new(horizon)
        }
    }

    pub fn switch_step(&self) -> usize {
        let f = self.explore_switch_fraction.clamp(0.0, 1.0);
        ((f * self.horizon as f64) + 1e-9).floor() as usize
    }
}

/// Samples one episode from the env's initial distribution.
pub fn rollout(
    env: &dyn Env,
    actor: &dyn Actor,
    goal: Option<State>,
    config: &RolloutConfig,
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    let s0 = env.reset(rng);
    rollout_from(env, actor, s0, goal, config, rng)
}

pub fn rollout_from(
    env: &dyn Env,
    actor: &dyn Actor,
    start: State,
    goal: Option<State>,
    config: &RolloutConfig,
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    let action_count = env.spec().action_count;
    let limit = config.max_steps.map_or(config.horizon, |m| m.min(config.horizon));
    let switch = config.switch_step();
    let mut traj = Trajectory::start(start);
    if config.stop_at_goal && goal == Some(start) {
        traj.terminal = true;
        return Ok(traj);
    }
    let mut s = start;
    let mut reached = false;
    for t in 0..limit {
        let explore = t >= switch || goal.is_none() || (reached && config.explore_after_goal);
        let action = if explore {
            rng.gen_range(0..action_count)
        } else {
            actor.act(s, goal, rng)
        };
        let tr = env.step(s, action, rng)?;
        traj.push(action, tr.next_state, explore);
        s = tr.next_state;
        if tr.terminal {
            traj.terminal = true;
            break;
        }
        if Some(s) == goal {
            if config.stop_at_goal {
                traj.terminal = true;
                break;
            }
            reached = true;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridMaze, MazeAction};
    use proptest::prelude::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixed(Action);
    impl Actor for Fixed {
        fn act(&self, _: State, _: Option<State>, _: &mut dyn RngCore) -> Action {
            self.0
        }
    }

    fn stay_rollout(fraction: f64, horizon: usize) -> Trajectory {
        let maze = GridMaze::open(20, 20, (10, 10), horizon).unwrap();
        let cfg = RolloutConfig {
            explore_switch_fraction: fraction,
            ..RolloutConfig::new(horizon)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        rollout(&maze, &Fixed(MazeAction::Stay as usize), Some(0), &cfg, &mut rng).unwrap()
    }

    #[test]
    fn switch_at_ninety_percent() {
        let t = stay_rollout(0.9, 200);
        assert_eq!(t.len(), 200);
        assert!(t.exploratory[..180].iter().all(|e| !e));
        assert!(t.exploratory[180..].iter().all(|e| *e));
        assert!(t.actions[..180].iter().all(|&a| a == MazeAction::Stay as usize));
    }

    #[test]
    fn switch_boundaries() {
        assert!(stay_rollout(1.0, 50).exploratory.iter().all(|e| !e));
        assert!(stay_rollout(0.0, 50).exploratory.iter().all(|e| *e));
    }

    #[test]
    fn stops_at_goal_and_respects_horizon() {
        let maze = GridMaze::corridor(5, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = RolloutConfig::new(10);
        let t = rollout(&maze, &Fixed(MazeAction::Right as usize), Some(3), &cfg, &mut rng).unwrap();
        assert_eq!(t.states, vec![0, 1, 2, 3]);
        assert!(t.terminal);
        let t = rollout(&maze, &Fixed(MazeAction::Left as usize), Some(3), &cfg, &mut rng).unwrap();
        assert_eq!(t.len(), 10);
        assert!(!t.terminal);
        let t = rollout(&maze, &Fixed(MazeAction::Left as usize), Some(0), &cfg, &mut rng).unwrap();
        assert_eq!(t.len(), 0);
    }

    #[test]
    fn explores_after_goal_when_not_stopping() {
        let maze = GridMaze::corridor(5, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = RolloutConfig {
            stop_at_goal: false,
            ..RolloutConfig::evaluation(10)
        };
        let t = rollout(&maze, &Fixed(MazeAction::Right as usize), Some(2), &cfg, &mut rng).unwrap();
        assert_eq!(t.len(), 10);
        assert!(t.exploratory[..2].iter().all(|e| !e));
        assert!(t.exploratory[2..].iter().all(|e| *e));
    }

    #[test]
    fn greedy_tie_break_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmin(&[2.0, 1.0, 1.0, 5.0]), 1);
        let p = QPolicy::new(2, 3, PolicyKind::EpsilonGreedy { epsilon: 0.0 }, 0.5, 0.0);
        assert_eq!(p.greedy_action(0, 1), 0);
    }

    #[test]
    fn sampled_frequencies_match_probabilities() {
        let mut p = QPolicy::new(1, 4, PolicyKind::Softmax { temperature: 1.0 }, 0.5, 0.0);
        for (a, q) in [0.0, 0.5, -1.0, 1.0].iter().enumerate() {
            p.set_q(0, 0, a, *q);
        }
        let probs = p.action_probs(0, Some(0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..m {
            counts[p.act(0, Some(0), &mut rng)] += 1;
        }
        for a in 0..4 {
            let f = counts[a] as f64 / m as f64;
            let sigma = (probs[a] * (1.0 - probs[a]) / m as f64).sqrt();
            assert!((f - probs[a]).abs() <= 3.0 * sigma, "action {a}: {f} vs {}", probs[a]);
        }
    }

    #[test]
    fn policy_csv_round_trip() {
        let mut p = QPolicy::new(3, 2, PolicyKind::EpsilonGreedy { epsilon: 0.2 }, 0.5, 0.0);
        p.set_q(1, 2, 1, -3.5);
        p.set_q(0, 0, 0, -1.0);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = QPolicy::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn probabilities_on_simplex(
            q in prop::collection::vec(-100.0f64..100.0, 1..6),
            eps in 0.0f64..1.0,
            temp in 0.0f64..10.0,
            softmax in any::<bool>(),
        ) {
            let kind = if softmax {
                PolicyKind::Softmax { temperature: temp }
            } else {
                PolicyKind::EpsilonGreedy { epsilon: eps }
            };
            let mut p = QPolicy::new(1, q.len(), kind, 0.5, 0.0);
            for (a, v) in q.iter().enumerate() {
                p.set_q(0, 0, a, *v);
            }
            let probs = p.action_probs(0, Some(0));
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(probs.iter().all(|&x| x >= 0.0));
        }
    }
}
