use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Action, Env, EnvSpec, InitialState, State, StateSpace};
use crate::error::{DdlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MazeAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

impl MazeAction {
    pub const ALL: [MazeAction; 5] = [
        MazeAction::Up,
        MazeAction::Down,
        MazeAction::Left,
        MazeAction::Right,
        MazeAction::Stay,
    ];

    pub fn delta(self) -> (i64, i64) {
        match self {
            MazeAction::Up => (0, -1),
            MazeAction::Down => (0, 1),
            MazeAction::Left => (-1, 0),
            MazeAction::Right => (1, 0),
            MazeAction::Stay => (0, 0),
        }
    }
}

/// Deterministic 4-connected grid world. State id of cell `(x, y)` is
/// `y * width + x`; wall cells have ids but are never occupied.
#[derive(Debug, Clone)]
pub struct GridMaze {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    start: State,
    goal_hint: Option<State>,
    spec: EnvSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Wall,
    Free,
    Start,
    Goal,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub kind: CellKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<f64>,
}

/// Row-major cell matrix, `cells[y][x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridRender(pub Vec<Vec<GridCell>>);

impl GridRender {
    pub fn height(&self) -> usize {
        self.0.len()
    }

    pub fn width(&self) -> usize {
        self.0.first().map_or(0, Vec::len)
    }

    pub fn cell(&self, x: usize, y: usize) -> &GridCell {
        &self.0[y][x]
    }
}

impl GridMaze {
    /// Parses a maze: `#` wall, `.` free, `S` start, optional `G` goal hint.
    pub fn parse(text: &str, horizon: usize) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(DdlError::Parse("empty maze".into()));
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut walls = Vec::with_capacity(width * height);
        let mut start = None;
        let mut goal_hint = None;
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(DdlError::Parse(format!(
                    "row {y} has {} cells, expected {width}",
                    row.chars().count()
                )));
            }
            for (x, c) in row.chars().enumerate() {
                let id = y * width + x;
                match c {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' => {
                        if start.replace(id).is_some() {
                            return Err(DdlError::Parse("more than one `S`".into()));
                        }
                        walls.push(false);
                    }
                    'G' => {
                        if goal_hint.replace(id).is_some() {
                            return Err(DdlError::Parse("more than one `G`".into()));
                        }
                        walls.push(false);
                    }
                    other => {
                        return Err(DdlError::Parse(format!(
                            "unexpected character {other:?} at ({x}, {y})"
                        )))
                    }
                }
            }
        }
        let start = start.ok_or_else(|| DdlError::Parse("maze has no `S`".into()))?;
        Self::from_parts(width, height, walls, start, goal_hint, horizon)
    }

    /// Wall-free `width x height` grid.
    pub fn open(width: usize, height: usize, start: (usize, usize), horizon: usize) -> Result<Self> {
        let walls = vec![false; width * height];
        Self::from_parts(width, height, walls, start.1 * width + start.0, None, horizon)
    }

    /// One-row corridor of `len` cells starting at the left end.
    pub fn corridor(len: usize, horizon: usize) -> Result<Self> {
        Self::open(len, 1, (0, 0), horizon)
    }

    fn from_parts(
        width: usize,
        height: usize,
        walls: Vec<bool>,
        start: State,
        goal_hint: Option<State>,
        horizon: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(DdlError::Parse("maze must be at least 1x1".into()));
        }
        if start >= width * height || walls[start] {
            return Err(DdlError::InvalidState(start));
        }
        let spec = EnvSpec {
            state_space: StateSpace::Finite(width * height),
            action_count: MazeAction::ALL.len(),
            horizon,
            initial: InitialState::Fixed(start),
            goal_terminal: true,
        };
        spec.validate()?;
        Ok(GridMaze {
            width,
            height,
            walls,
            start,
            goal_hint,
            spec,
        })
    }

    /// Draw initial states uniformly over all free cells.
    pub fn with_uniform_start(mut self) -> Self {
        self.spec.initial = InitialState::Uniform(self.free_cells());
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.spec.horizon = horizon.max(1);
        self
    }

    pub fn with_goal_hint(mut self, goal: State) -> Result<Self> {
        if !self.is_free(goal) {
            return Err(DdlError::InvalidState(goal));
        }
        self.goal_hint = Some(goal);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> State {
        self.start
    }

    pub fn goal_hint(&self) -> Option<State> {
        self.goal_hint
    }

    pub fn cell_id(&self, x: usize, y: usize) -> Option<State> {
        (x < self.width && y < self.height).then_some(y * self.width + x)
    }

    pub fn coords(&self, s: State) -> (usize, usize) {
        (s % self.width, s / self.width)
    }

    pub fn is_wall(&self, s: State) -> bool {
        self.walls.get(s).copied().unwrap_or(true)
    }

    pub fn is_free(&self, s: State) -> bool {
        !self.is_wall(s)
    }

    pub fn free_cells(&self) -> Vec<State> {
        (0..self.walls.len()).filter(|&s| !self.walls[s]).collect()
    }

    pub fn move_from(&self, s: State, action: MazeAction) -> State {
        let (x, y) = self.coords(s);
        let (dx, dy) = action.delta();
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            return s;
        }
        let next = ny as usize * self.width + nx as usize;
        if self.walls[next] {
            s
        } else {
            next
        }
    }

    /// Cell matrix with optional markers and a per-state scalar overlay.
    ///
    /// `values` is indexed by state id and must have one entry per cell;
    /// wall cells never carry a value.
    pub fn render(
        &self,
        agent: Option<State>,
        goal: Option<State>,
        values: Option<&[f64]>,
    ) -> Result<GridRender> {
        if let Some(v) = values {
            if v.len() != self.width * self.height {
                return Err(DdlError::ShapeMismatch {
                    expected: format!("{} values ({}x{})", self.width * self.height, self.width, self.height),
                    got: format!("{} values", v.len()),
                });
            }
        }
        let rows = (0..self.height)
            .map(|y| {
                (0..self.width)
                    .map(|x| {
                        let s = y * self.width + x;
                        if self.walls[s] {
                            return GridCell {
                                kind: CellKind::Wall,
                                value: None,
                            };
                        }
                        let kind = if agent == Some(s) {
                            CellKind::Agent
                        } else if goal == Some(s) {
                            CellKind::Goal
                        } else if s == self.start {
                            CellKind::Start
                        } else {
                            CellKind::Free
                        };
                        GridCell {
                            kind,
                            value: values.map(|v| v[s]),
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(GridRender(rows))
    }
}

impl fmt::Display for GridMaze {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.height {
            for x in 0..self.width {
                let s = y * self.width + x;
                let c = if self.walls[s] {
                    '#'
                } else if s == self.start {
                    'S'
                } else if Some(s) == self.goal_hint {
                    'G'
                } else {
                    '.'
                };
                write!(f, "{c}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl Env for GridMaze {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn outcomes(&self, state: State, action: Action) -> Result<Vec<(State, f64)>> {
        self.check_action(action)?;
        if !self.is_free(state) {
            return Err(DdlError::InvalidState(state));
        }
        Ok(vec![(self.move_from(state, MazeAction::ALL[action]), 1.0)])
    }

    fn is_absorbing(&self, _state: State) -> bool {
        false
    }

    fn enumerate_states(&self) -> Result<Vec<State>> {
        Ok(self.free_cells())
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn as_grid(&self) -> Option<&GridMaze> {
        Some(self)
    }
}

/// `render_grid` for any env: grid envs only.
pub fn render_grid(
    env: &dyn Env,
    agent: Option<State>,
    goal: Option<State>,
    values: Option<&[f64]>,
) -> Result<GridRender> {
    env.as_grid()
        .ok_or(DdlError::Unsupported("render_grid on a non-grid env"))?
        .render(agent, goal, values)
}
