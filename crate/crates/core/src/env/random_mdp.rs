use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, Env, EnvSpec, InitialState, State, StateSpace};
use crate::error::{DdlError, Result};

pub const MAX_STATES: usize = 64;
pub const MAX_ACTIONS: usize = 4;
const MAX_ATTEMPTS: usize = 10_000;

/// Seeded random deterministic MDP with a designated start (state 0) and
/// goal. Generated tables are rejection-sampled until every state has a
/// path to the goal.
#[derive(Debug, Clone)]
pub struct RandomDeterministicMdp {
    table: Vec<Vec<State>>,
    goal: State,
    seed: Option<u64>,
    spec: EnvSpec,
}

impl RandomDeterministicMdp {
    pub fn generate(seed: u64, state_count: usize, action_count: usize, horizon: usize) -> Result<Self> {
        if !(2..=MAX_STATES).contains(&state_count) {
            return Err(DdlError::config("state_count", format!("must be in 2..={MAX_STATES}")));
        }
        if !(1..=MAX_ACTIONS).contains(&action_count) {
            return Err(DdlError::config("action_count", format!("must be in 1..={MAX_ACTIONS}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let goal = state_count - 1;
        for _ in 0..MAX_ATTEMPTS {
            let table: Vec<Vec<State>> = (0..state_count)
                .map(|_| (0..action_count).map(|_| rng.gen_range(0..state_count)).collect())
                .collect();
            if reaches_everywhere(&table, goal) {
                let mut mdp = Self::from_table(table, 0, Some(goal), horizon)?;
                mdp.seed = Some(seed);
                return Ok(mdp);
            }
        }
        Err(DdlError::Parse(format!(
            "no goal-connected MDP found for seed {seed} after {MAX_ATTEMPTS} attempts"
        )))
    }

    /// Builds an MDP from an explicit `state x action -> state` table. No
    /// connectivity requirement is imposed.
    pub fn from_table(
        table: Vec<Vec<State>>,
        start: State,
        goal: Option<State>,
        horizon: usize,
    ) -> Result<Self> {
        let n = table.len();
        let action_count = table.first().map_or(0, Vec::len);
        if n == 0 || action_count == 0 {
            return Err(DdlError::Parse("empty transition table".into()));
        }
        for row in &table {
            if row.len() != action_count {
                return Err(DdlError::ShapeMismatch {
                    expected: format!("{action_count} actions per state"),
                    got: format!("{}", row.len()),
                });
            }
            if let Some(&bad) = row.iter().find(|&&s| s >= n) {
                return Err(DdlError::InvalidState(bad));
            }
        }
        if let Some(g) = goal.filter(|&g| g >= n) {
            return Err(DdlError::InvalidState(g));
        }
        let spec = EnvSpec {
            state_space: StateSpace::Finite(n),
            action_count,
            horizon,
            initial: InitialState::Fixed(start),
            goal_terminal: true,
        };
        spec.validate()?;
        Ok(RandomDeterministicMdp {
            table,
            goal: goal.unwrap_or(n - 1),
            seed: None,
            spec,
        })
    }

    /// Deterministic cycle `0 -> 1 -> ... -> n-1 -> 0` with a single action.
    pub fn cycle(n: usize, horizon: usize) -> Result<Self> {
        let table = (0..n).map(|s| vec![(s + 1) % n]).collect();
        Self::from_table(table, 0, None, horizon)
    }

    /// Chain `0 -> 1 -> ... -> n-1` where the last state self-loops.
    pub fn chain(n: usize, horizon: usize) -> Result<Self> {
        let table = (0..n).map(|s| vec![(s + 1).min(n - 1)]).collect();
        Self::from_table(table, 0, Some(n - 1), horizon)
    }

    /// Draw initial states uniformly over all states.
    pub fn with_uniform_start(mut self) -> Self {
        self.spec.initial = InitialState::Uniform((0..self.table.len()).collect());
        self
    }

    pub fn goal(&self) -> State {
        self.goal
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn next(&self, s: State, a: Action) -> State {
        self.table[s][a]
    }
}

fn reaches_everywhere(table: &[Vec<State>], goal: State) -> bool {
    let n = table.len();
    let mut preds: Vec<Vec<State>> = vec![Vec::new(); n];
    for (s, row) in table.iter().enumerate() {
        for &t in row {
            preds[t].push(s);
        }
    }
    let mut seen = vec![false; n];
    seen[goal] = true;
    let mut stack = vec![goal];
    while let Some(t) = stack.pop() {
        for &s in &preds[t] {
            if !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    seen.into_iter().all(|b| b)
}

impl Env for RandomDeterministicMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn outcomes(&self, state: State, action: Action) -> Result<Vec<(State, f64)>> {
        self.check_action(action)?;
        let row = self.table.get(state).ok_or(DdlError::InvalidState(state))?;
        Ok(vec![(row[action], 1.0)])
    }

    fn is_absorbing(&self, _state: State) -> bool {
        false
    }

    fn enumerate_states(&self) -> Result<Vec<State>> {
        Ok((0..self.table.len()).collect())
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
