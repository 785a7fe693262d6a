use std::fs;

use crate::env::{finite_state_count, Env, GridMaze, PathologicalMdp, RandomDeterministicMdp, State};
use crate::error::{DdlError, Result};

pub const SMAZE9: &str = include_str!("../../mazes/smaze9.txt");
pub const SMAZE15: &str = include_str!("../../mazes/smaze15.txt");

/// An environment built from a config `env` string, plus the goal it
/// suggests when none is configured.
pub struct BuiltEnv {
    pub env: Box<dyn Env>,
    pub default_goal: Option<State>,
}

impl std::fmt::Debug for BuiltEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BuiltEnv")
            .field("spec", self.env.spec())
            .field("default_goal", &self.default_goal)
            .finish()
    }
}

fn bad(spec: &str, msg: &str) -> DdlError {
    DdlError::config("env", format!("{spec:?}: {msg}"))
}

fn grid(maze: GridMaze, uniform_start: bool) -> BuiltEnv {
    let default_goal = maze.goal_hint();
    let maze = if uniform_start { maze.with_uniform_start() } else { maze };
    BuiltEnv {
        env: Box::new(maze),
        default_goal,
    }
}

/// Builds one of: `smaze9`, `smaze15`, `maze:<path>`, `corridor:<len>`,
/// `open:<w>x<h>`, `pathological:<p>`, `random:<seed>:<states>:<actions>`.
pub fn build_env(spec: &str, horizon: usize, uniform_start: bool) -> Result<BuiltEnv> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let num = |s: &str| -> Result<usize> { s.trim().parse().map_err(|_| bad(spec, "expected an integer")) };
    match kind {
        "smaze9" => Ok(grid(GridMaze::parse(SMAZE9, horizon)?, uniform_start)),
        "smaze15" => Ok(grid(GridMaze::parse(SMAZE15, horizon)?, uniform_start)),
        "maze" => {
            let text = fs::read_to_string(arg)?;
            Ok(grid(GridMaze::parse(&text, horizon)?, uniform_start))
        }
        "corridor" => {
            let len = num(arg)?;
            let maze = GridMaze::corridor(len, horizon)?.with_goal_hint(len.saturating_sub(1))?;
            Ok(grid(maze, uniform_start))
        }
        "open" => {
            let (w, h) = arg.split_once('x').ok_or_else(|| bad(spec, "expected <w>x<h>"))?;
            let (w, h) = (num(w)?, num(h)?);
            let maze = GridMaze::open(w, h, (0, 0), horizon)?.with_goal_hint(w * h - 1)?;
            Ok(grid(maze, uniform_start))
        }
        "pathological" => {
            let p: f64 = arg.trim().parse().map_err(|_| bad(spec, "expected a probability"))?;
            if uniform_start {
                return Err(bad(spec, "uniform_start is not available"));
            }
            let env = PathologicalMdp::new(p, horizon)?;
            Ok(BuiltEnv {
                default_goal: Some(env.goal()),
                env: Box::new(env),
            })
        }
        "random" => {
            let parts: Vec<&str> = arg.split(':').collect();
            let [seed, n, a] = parts.as_slice() else {
                return Err(bad(spec, "expected random:<seed>:<states>:<actions>"));
            };
            let seed: u64 = seed.trim().parse().map_err(|_| bad(spec, "bad seed"))?;
            let env = RandomDeterministicMdp::generate(seed, num(n)?, num(a)?, horizon)?;
            let env = if uniform_start { env.with_uniform_start() } else { env };
            Ok(BuiltEnv {
                default_goal: Some(env.goal()),
                env: Box::new(env),
            })
        }
        _ => Err(bad(spec, "unknown env kind")),
    }
}

/// A state given as an id, or as `x,y` on grid envs. Must be occupiable.
pub fn parse_state(env: &dyn Env, key: &str, text: &str) -> Result<State> {
    let n = finite_state_count(env)?;
    let state = match (text.split_once(','), env.as_grid()) {
        (Some((x, y)), Some(g)) => {
            let x: usize = x.trim().parse().map_err(|_| DdlError::config(key, format!("bad x in {text:?}")))?;
            let y: usize = y.trim().parse().map_err(|_| DdlError::config(key, format!("bad y in {text:?}")))?;
            g.cell_id(x, y)
                .ok_or_else(|| DdlError::config(key, format!("({x}, {y}) is outside the grid")))?
        }
        (Some(_), None) => return Err(DdlError::config(key, "x,y coordinates need a grid env")),
        (None, _) => text
            .trim()
            .parse()
            .map_err(|_| DdlError::config(key, format!("bad state {text:?}")))?,
    };
    let valid = state < n && env.as_grid().is_none_or(|g| g.is_free(state));
    if !valid {
        return Err(DdlError::config(key, format!("state {state} is not occupiable")));
    }
    Ok(state)
}

/// The designated start used by goal proposal: the fixed start, or the
/// first state of a uniform start set.
pub fn designated_start(env: &dyn Env) -> State {
    env.initial_distribution()[0].0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::bfs_to;

    #[test]
    fn shipped_mazes_have_frozen_path_lengths() {
        for (name, len, free) in [("smaze9", 23, 69), ("smaze15", 44, 203)] {
            let built = build_env(name, 100, false).unwrap();
            let maze = built.env.as_grid().unwrap();
            let goal = built.default_goal.unwrap();
            assert_eq!(bfs_to(built.env.as_ref(), goal).unwrap()[maze.start()], Some(len), "{name}");
            assert_eq!(maze.free_cells().len(), free, "{name}");
        }
    }

    #[test]
    fn parses_every_kind() {
        for spec in ["corridor:40", "open:3x4", "pathological:0.1", "random:7:10:3"] {
            build_env(spec, 20, false).unwrap();
        }
        assert!(build_env("torus:3", 20, false).is_err());
        assert!(build_env("open:3by4", 20, false).is_err());
    }

    #[test]
    fn state_by_coordinates() {
        let built = build_env("smaze9", 50, false).unwrap();
        assert_eq!(parse_state(built.env.as_ref(), "goal", "8,8").unwrap(), 80);
        assert_eq!(parse_state(built.env.as_ref(), "goal", "80").unwrap(), 80);
        // (0, 3) is a wall
        assert!(parse_state(built.env.as_ref(), "goal", "0,3").is_err());
        assert!(parse_state(built.env.as_ref(), "goal", "81").is_err());
    }
}
