use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::{Action, State};

/// One episode: `states.len() == actions.len() + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    /// `exploratory[t]` is true when action `t` was forced uniform-random
    /// (exploration tail or post-goal exploration).
    pub exploratory: Vec<bool>,
    /// The episode ended by entering an absorbing state or the goal.
    pub terminal: bool,
}

impl Trajectory {
    pub fn start(s0: State) -> Self {
        Trajectory {
            states: vec![s0],
            actions: Vec::new(),
            exploratory: Vec::new(),
            terminal: false,
        }
    }

    pub fn push(&mut self, action: Action, next: State, exploratory: bool) {
        self.actions.push(action);
        self.states.push(next);
        self.exploratory.push(exploratory);
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn first_state(&self) -> State {
        self.states[0]
    }

    pub fn final_state(&self) -> State {
        *self.states.last().expect("trajectory has at least one state")
    }

    pub fn transitions(&self) -> impl Iterator<Item = (State, Action, State)> + '_ {
        self.actions
            .iter()
            .enumerate()
            .map(move |(t, &a)| (self.states[t], a, self.states[t + 1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StampedTrajectory {
    pub trajectory: Trajectory,
    /// Total env steps when this trajectory finished.
    pub env_step: u64,
}

/// FIFO trajectory buffer bounded by the total number of stored
/// transitions. Used both as the on-policy pool for distance regression and
/// as the replay pool for policy improvement.
#[derive(Debug, Clone)]
pub struct TrajectoryPool {
    capacity: usize,
    transitions: usize,
    trajectories: VecDeque<StampedTrajectory>,
}

pub type OnPolicyPool = TrajectoryPool;

impl TrajectoryPool {
    pub fn new(capacity: usize) -> Self {
        TrajectoryPool {
            capacity: capacity.max(1),
            transitions: 0,
            trajectories: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends a trajectory, evicting the oldest ones until the transition
    /// count fits. A trajectory longer than the capacity is truncated to its
    /// most recent `capacity` transitions.
    pub fn push(&mut self, mut trajectory: Trajectory, env_step: u64) {
        if trajectory.len() > self.capacity {
            let cut = trajectory.len() - self.capacity;
            trajectory.states.drain(..cut);
            trajectory.actions.drain(..cut);
            trajectory.exploratory.drain(..cut);
        }
        self.transitions += trajectory.len();
        self.trajectories.push_back(StampedTrajectory {
            trajectory,
            env_step,
        });
        while self.transitions > self.capacity {
            let old = self.trajectories.pop_front().expect("non-empty while over capacity");
            self.transitions -= old.trajectory.len();
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions
    }

    pub fn get(&self, i: usize) -> Option<&Trajectory> {
        self.trajectories.get(i).map(|t| &t.trajectory)
    }

    /// Oldest first.
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &Trajectory> + '_ {
        self.trajectories.iter().map(|t| &t.trajectory)
    }

    pub fn stamped(&self) -> impl DoubleEndedIterator<Item = &StampedTrajectory> + '_ {
        self.trajectories.iter()
    }

    /// Every stored state in time order, oldest first.
    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        self.iter().flat_map(|t| t.states.iter().copied())
    }

    /// Final states of the `n` most recent trajectories, oldest first.
    pub fn recent_final_states(&self, n: usize) -> Vec<State> {
        let skip = self.trajectories.len().saturating_sub(n);
        self.iter().skip(skip).map(Trajectory::final_state).collect()
    }

    /// Transition addressed by a flat index in `0..transition_count()`.
    pub fn transition_at(&self, mut index: usize) -> Option<(State, Action, State)> {
        for t in self.iter() {
            if index < t.len() {
                return Some((t.states[index], t.actions[index], t.states[index + 1]));
            }
            index -= t.len();
        }
        None
    }
}
