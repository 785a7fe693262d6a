//! Environment contract and the small finite MDPs used for training and
//! exact verification.
//!
//! States and actions are dense integer ids. Every environment here is
//! immutable after construction; the caller owns the episode cursor (the
//! current state and step counter), so a single env can serve many
//! concurrent rollouts.

mod grid;
mod pathological;
mod random_mdp;

pub use grid::{render_grid, CellKind, GridCell, GridMaze, GridRender, MazeAction};
pub use pathological::{PathologicalMdp, PathologicalState};
pub use random_mdp::RandomDeterministicMdp;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{DdlError, Result};

pub type State = usize;
pub type Action = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateSpace {
    /// State ids are `0..n`. Not every id has to be occupiable (grid walls).
    Finite(usize),
    Continuous { dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    Fixed(State),
    /// Uniform over the listed states.
    Uniform(Vec<State>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_space: StateSpace,
    pub action_count: usize,
    /// Maximum episode length `T` in transitions.
    pub horizon: usize,
    pub initial: InitialState,
    /// Whether reaching the episode goal ends the episode.
    pub goal_terminal: bool,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(DdlError::config("horizon", "must be >= 1"));
        }
        if self.action_count == 0 {
            return Err(DdlError::config("action_count", "must be >= 1"));
        }
        let n = match self.state_space {
            StateSpace::Finite(n) => n,
            StateSpace::Continuous { .. } => return Ok(()),
        };
        let ok = match &self.initial {
            InitialState::Fixed(s) => *s < n,
            InitialState::Uniform(v) => !v.is_empty() && v.iter().all(|s| *s < n),
        };
        if ok {
            Ok(())
        } else {
            Err(DdlError::config("initial_state", "not a valid state"))
        }
    }

    pub fn state_count(&self) -> Option<usize> {
        match self.state_space {
            StateSpace::Finite(n) => Some(n),
            StateSpace::Continuous { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    pub next_state: State,
    /// The next state is absorbing; the episode must end.
    pub terminal: bool,
}

/// A Markov decision process over integer states and actions.
///
/// Implementors provide the full outcome distribution of each
/// state-action pair; sampling, determinism checks and afterstates are
/// derived from it.
pub trait Env: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Outcome distribution `p(. | s, a)` as `(next_state, probability)`
    /// pairs with positive probabilities summing to one.
    fn outcomes(&self, state: State, action: Action) -> Result<Vec<(State, f64)>>;

    /// Absorbing states end the episode when entered.
    fn is_absorbing(&self, state: State) -> bool;

    /// Occupiable states, ascending and duplicate-free.
    fn enumerate_states(&self) -> Result<Vec<State>>;

    fn is_deterministic(&self) -> bool;

    fn as_grid(&self) -> Option<&GridMaze> {
        None
    }

    fn reset(&self, rng: &mut dyn RngCore) -> State {
        match &self.spec().initial {
            InitialState::Fixed(s) => *s,
            InitialState::Uniform(v) => v[rng.gen_range(0..v.len())],
        }
    }

    fn initial_distribution(&self) -> Vec<(State, f64)> {
        match &self.spec().initial {
            InitialState::Fixed(s) => vec![(*s, 1.0)],
            InitialState::Uniform(v) => {
                let p = 1.0 / v.len() as f64;
                v.iter().map(|s| (*s, p)).collect()
            }
        }
    }

    fn step(&self, state: State, action: Action, rng: &mut dyn RngCore) -> Result<Transition> {
        let outcomes = self.outcomes(state, action)?;
        let next_state = if outcomes.len() == 1 {
            outcomes[0].0
        } else {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = outcomes[outcomes.len() - 1].0;
            for (s, p) in &outcomes {
                acc += p;
                if u < acc {
                    chosen = *s;
                    break;
                }
            }
            chosen
        };
        Ok(Transition {
            state,
            action,
            next_state,
            terminal: self.is_absorbing(next_state),
        })
    }

    /// Deterministic successor of `(s, a)`, needed for one-step lookahead.
    /// Fails when this particular state-action pair is stochastic.
    fn afterstate(&self, state: State, action: Action) -> Result<State> {
        match self.outcomes(state, action)?.as_slice() {
            [(next, _)] => Ok(*next),
            _ => Err(DdlError::Unsupported("afterstate of a stochastic transition")),
        }
    }

    fn check_action(&self, action: Action) -> Result<()> {
        let action_count = self.spec().action_count;
        if action < action_count {
            Ok(())
        } else {
            Err(DdlError::InvalidAction {
                action,
                action_count,
            })
        }
    }
}

/// Finite state count of `env`, or an `Unsupported` error for continuous envs.
pub fn finite_state_count(env: &dyn Env) -> Result<usize> {
    env.spec()
        .state_count()
        .ok_or(DdlError::Unsupported("operation requires a finite env"))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct PointEnv {
        spec: EnvSpec,
    }

    impl Env for PointEnv {
        fn spec(&self) -> &EnvSpec {
            &self.spec
        }
        fn outcomes(&self, state: State, _action: Action) -> Result<Vec<(State, f64)>> {
            Ok(vec![(state, 1.0)])
        }
        fn is_absorbing(&self, _state: State) -> bool {
            false
        }
        fn enumerate_states(&self) -> Result<Vec<State>> {
            Err(DdlError::Unsupported("enumerate_states on a continuous env"))
        }
        fn is_deterministic(&self) -> bool {
            true
        }
    }

    #[test]
    fn continuous_env_has_no_finite_state_count() {
        let env = PointEnv {
            spec: EnvSpec {
                state_space: StateSpace::Continuous { dim: 2 },
                action_count: 4,
                horizon: 10,
                initial: InitialState::Fixed(0),
                goal_terminal: true,
            },
        };
        assert!(matches!(
            finite_state_count(&env),
            Err(DdlError::Unsupported(_))
        ));
        assert!(matches!(
            env.enumerate_states(),
            Err(DdlError::Unsupported(_))
        ));
    }

    #[test]
    fn spec_validation() {
        let mut spec = EnvSpec {
            state_space: StateSpace::Finite(3),
            action_count: 2,
            horizon: 5,
            initial: InitialState::Fixed(2),
            goal_terminal: true,
        };
        assert!(spec.validate().is_ok());
        spec.initial = InitialState::Fixed(3);
        assert!(spec.validate().is_err());
        spec.initial = InitialState::Fixed(0);
        spec.horizon = 0;
        assert!(spec.validate().is_err());
    }
}
