use super::{Action, Env, EnvSpec, InitialState, State, StateSpace};
use crate::error::{DdlError, Result};

/// The two-branch risky/safe MDP.
///
/// From `S0`, action 0 enters the risky branch: one intermediate state that
/// reaches the goal with probability `p` and otherwise falls into the
/// absorbing failure state. Action 1 enters the safe branch, which reaches
/// the goal deterministically through two intermediate states. Outside
/// `S0` both actions advance along the branch.
#[derive(Debug, Clone)]
pub struct PathologicalMdp {
    p: f64,
    spec: EnvSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathologicalState {
    S0 = 0,
    RiskyMid = 1,
    SafeMid1 = 2,
    SafeMid2 = 3,
    Goal = 4,
    Failure = 5,
}

impl PathologicalMdp {
    pub const RISKY: Action = 0;
    pub const SAFE: Action = 1;
    pub const STATE_COUNT: usize = 6;

    pub fn new(p: f64, horizon: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(DdlError::config("p", format!("{p} is not a probability")));
        }
        let spec = EnvSpec {
            state_space: StateSpace::Finite(Self::STATE_COUNT),
            action_count: 2,
            horizon,
            initial: InitialState::Fixed(PathologicalState::S0 as State),
            goal_terminal: true,
        };
        spec.validate()?;
        Ok(PathologicalMdp { p, spec })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn goal(&self) -> State {
        PathologicalState::Goal as State
    }
}

impl Env for PathologicalMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn outcomes(&self, state: State, action: Action) -> Result<Vec<(State, f64)>> {
        use PathologicalState::*;
        self.check_action(action)?;
        let goal = Goal as State;
        let out = match state {
            s if s == S0 as State => {
                if action == Self::RISKY {
                    vec![(RiskyMid as State, 1.0)]
                } else {
                    vec![(SafeMid1 as State, 1.0)]
                }
            }
            s if s == RiskyMid as State => {
                if self.p >= 1.0 {
                    vec![(goal, 1.0)]
                } else if self.p <= 0.0 {
                    vec![(Failure as State, 1.0)]
                } else {
                    vec![(goal, self.p), (Failure as State, 1.0 - self.p)]
                }
            }
            s if s == SafeMid1 as State => vec![(SafeMid2 as State, 1.0)],
            s if s == SafeMid2 as State => vec![(goal, 1.0)],
            s if s == goal || s == Failure as State => vec![(s, 1.0)],
            s => return Err(DdlError::InvalidState(s)),
        };
        Ok(out)
    }

    fn is_absorbing(&self, state: State) -> bool {
        state == PathologicalState::Goal as State || state == PathologicalState::Failure as State
    }

    fn enumerate_states(&self) -> Result<Vec<State>> {
        Ok((0..Self::STATE_COUNT).collect())
    }

    fn is_deterministic(&self) -> bool {
        self.p <= 0.0 || self.p >= 1.0
    }
}
