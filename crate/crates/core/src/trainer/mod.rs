//! The training loop: roll out toward the current goal, refit the distance
//! on recent experience, re-choose the goal, and improve the policy against
//! the learned distance.

mod config;
mod envs;

pub use config::{Baseline, DistanceKind, Method, Ratio, TrainerConfig};
pub use envs::{build_env, designated_start, parse_state, BuiltEnv, SMAZE15, SMAZE9};

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distance::{DistanceEstimator, DistanceModel, MlpDistance, StateEncoder, TabularDistance, TdConfig};
use crate::env::{finite_state_count, Env, GridMaze, State};
use crate::error::{DdlError, Result};
use crate::goals::{
    ddlfp_choose, ddlus_choose, fixed_goal, FixedIndexProvider, GoalState, KeepPreviousProvider, PreferenceProvider,
    ScoreProvider,
};
use crate::oracle::bfs_to;
use crate::policy::{
    improve, rollout_from, sparse_reward_improve, Actor, Greedy, GreedyDistanceActor, ImproveConfig, QPolicy,
    RolloutConfig,
};
use crate::trajectory::TrajectoryPool;

/// One metrics record, written as a JSON line after every episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub env_steps: u64,
    /// Shortest-path distance from the episode's final state to the target
    /// (or the current goal); null when unknown.
    pub final_distance_to_goal: Option<usize>,
    /// Mean loss of this iteration's distance steps; null when none ran.
    pub distance_loss: Option<f64>,
    pub queries_used: u32,
    pub goal: Option<State>,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub metrics: Option<&'a mut dyn Write>,
    /// Checkpoints go here every `checkpoint_every` episodes and at the end.
    pub checkpoint_dir: Option<PathBuf>,
    pub on_episode: Option<&'a mut dyn FnMut(&EpisodeMetrics)>,
    /// Checked before every episode; when set the run ends early and still
    /// writes its final checkpoints.
    pub stop: Option<&'a AtomicBool>,
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: TrainerConfig,
    pub metrics: Vec<EpisodeMetrics>,
    pub policy: QPolicy,
    pub distance: DistanceModel,
    pub on_policy: TrajectoryPool,
    pub replay: TrajectoryPool,
    /// Every goal choice in order (one per episode under DDLUS).
    pub goal_history: Vec<GoalState>,
    pub final_goal: Option<State>,
    pub target: Option<State>,
    pub queries_used: u32,
    pub env_steps: u64,
    pub episodes: u64,
    pub distance_steps: u64,
    /// Per-state visit counts over all episodes.
    pub visits: Vec<u64>,
    /// Improvement passes run while the goal had no trained distance.
    pub blind_improvements: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean steps over successful episodes; null when none succeeded.
    pub mean_steps: Option<f64>,
}

/// Goal and hidden target resolved from the config.
fn resolve_goals(built: &BuiltEnv, cfg: &TrainerConfig) -> Result<(Option<State>, Option<State>)> {
    let env = built.env.as_ref();
    let target = cfg.target.as_deref().map(|t| parse_state(env, "target", t)).transpose()?;
    let goal = match cfg.method {
        Method::Fixed => Some(match cfg.goal.as_deref() {
            Some(g) => parse_state(env, "goal", g)?,
            None => target
                .or(built.default_goal)
                .ok_or_else(|| DdlError::config("goal", "method = fixed needs a goal"))?,
        }),
        _ => None,
    };
    Ok((goal, target))
}

/// The scripted preference provider named by `config.provider`.
pub fn scripted_provider(built: &BuiltEnv, cfg: &TrainerConfig) -> Result<Box<dyn PreferenceProvider>> {
    let env = built.env.as_ref();
    let p = cfg.provider.as_str();
    if let Some(k) = p.strip_prefix("index:") {
        let k = k
            .parse()
            .map_err(|_| DdlError::config("provider", format!("bad index in {p:?}")))?;
        return Ok(Box::new(FixedIndexProvider(k)));
    }
    match p {
        "bfs" => {
            let (_, target) = resolve_goals(built, cfg)?;
            let target = target
                .or(built.default_goal)
                .ok_or_else(|| DdlError::config("target", "the bfs provider needs a target"))?;
            Ok(Box::new(ScoreProvider::bfs_to_target(env, target)?))
        }
        "max_x" => {
            let maze = env
                .as_grid()
                .ok_or_else(|| DdlError::config("provider", "max_x needs a grid env"))?;
            Ok(Box::new(ScoreProvider::max_x(maze)))
        }
        "keep" => Ok(Box::new(KeepPreviousProvider)),
        _ => Err(DdlError::config("provider", format!("{p:?} is not a scripted provider"))),
    }
}

fn new_distance(env: &dyn Env, cfg: &TrainerConfig, rng: &mut dyn RngCore) -> Result<DistanceModel> {
    let n = finite_state_count(env)?;
    Ok(match cfg.distance_model {
        DistanceKind::Tabular => {
            DistanceModel::Tabular(TabularDistance::new(n, cfg.d_max()).with_count_cap(cfg.count_cap))
        }
        DistanceKind::Parametric => {
            let encoder = state_encoder(env)?;
            DistanceModel::Parametric(MlpDistance::new(encoder, &cfg.hidden_layers, cfg.lambda_d, cfg.d_max(), rng))
        }
    })
}

/// Grid envs encode `(x, y)`; everything else one-hot.
pub fn state_encoder(env: &dyn Env) -> Result<StateEncoder> {
    Ok(match env.as_grid() {
        Some(g) => StateEncoder::Grid {
            width: g.width(),
            height: g.height(),
        },
        None => StateEncoder::OneHot(finite_state_count(env)?),
    })
}

fn improve_config(cfg: &TrainerConfig, updates: usize) -> ImproveConfig {
    ImproveConfig {
        gamma: cfg.gamma,
        updates,
        batch_size: cfg.policy_batch_size,
        horizon: cfg.horizon,
    }
}

/// Shortest-path distances to a few targets, computed on demand.
struct BfsCache<'a> {
    env: &'a dyn Env,
    tables: HashMap<State, Vec<Option<usize>>>,
}

impl BfsCache<'_> {
    fn distance(&mut self, from: State, to: State) -> Result<Option<usize>> {
        if !self.env.is_deterministic() {
            return Ok(None);
        }
        if !self.tables.contains_key(&to) {
            self.tables.insert(to, bfs_to(self.env, to)?);
        }
        Ok(self.tables[&to].get(from).copied().flatten())
    }
}

/// Runs the training loop until `total_env_steps` env steps.
///
/// DDLUS re-chooses the goal before every episode; DDLfP asks `provider`
/// every `query_interval_env_steps` steps (episodes are cut at those
/// boundaries) until the budget is spent; fixed-goal runs never change it.
pub fn train(
    built: &BuiltEnv,
    config: &TrainerConfig,
    mut provider: Option<&mut dyn PreferenceProvider>,
    mut options: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let env = built.env.as_ref();
    let n = finite_state_count(env)?;
    if config.method == Method::Ddlfp && provider.is_none() {
        return Err(DdlError::config("provider", "method = ddlfp needs a preference provider"));
    }
    let (fixed, target) = resolve_goals(built, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut distance = new_distance(env, config, &mut rng)?;
    let mut policy = QPolicy::for_env(env, config.policy_kind(), config.lambda_pi, config.q_init)?;
    let mut on_policy = TrajectoryPool::new(config.on_policy_pool_capacity);
    let mut replay = TrajectoryPool::new(config.replay_pool_capacity);
    let mut bfs = BfsCache {
        env,
        tables: HashMap::new(),
    };
    let rollout_cfg = RolloutConfig {
        horizon: config.horizon,
        explore_switch_fraction: config.explore_switch_fraction,
        stop_at_goal: config.stop_at_goal,
        explore_after_goal: config.explore_after_goal,
        max_steps: None,
    };
    let improve_cfg = improve_config(config, config.n_pi);
    let td_cfg = TdConfig {
        gamma: config.td_gamma,
        learning_rate: config.td_learning_rate,
    };
    let s0 = designated_start(env);

    let mut goal_history = Vec::new();
    let mut goal: Option<GoalState> = match fixed {
        Some(g) => {
            let g = fixed_goal(env, g, 0)?;
            goal_history.push(g);
            Some(g)
        }
        None => None,
    };
    let mut metrics = Vec::new();
    let mut visits = vec![0u64; n];
    let (mut env_steps, mut episodes, mut distance_steps) = (0u64, 0u64, 0u64);
    let mut queries_used = 0u32;
    let mut next_query = config.query_interval_env_steps;
    let mut blind_improvements = 0u64;

    while env_steps < config.total_env_steps {
        if options.stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
            break;
        }
        if config.method == Method::Ddlus && !on_policy.is_empty() {
            let g = ddlus_choose(&distance, on_policy.states(), s0, env_steps)?;
            goal_history.push(g);
            goal = Some(g);
        }
        let goal_state = goal.map(|g| g.state);

        let mut rc = rollout_cfg;
        let mut cap = config.total_env_steps - env_steps;
        let querying = config.method == Method::Ddlfp && queries_used < config.query_budget;
        if querying {
            cap = cap.min(next_query - env_steps);
        }
        rc.max_steps = Some(cap as usize);
        let start = env.reset(&mut rng);
        if goal_state == Some(start) {
            // An episode that starts at the goal would be empty.
            rc.stop_at_goal = false;
        }
        let greedy_actor;
        let actor: &dyn Actor = if config.baseline == Baseline::Greedy {
            greedy_actor = GreedyDistanceActor {
                distance: &distance,
                env,
                epsilon: config.epsilon,
            };
            &greedy_actor
        } else {
            &policy
        };
        let traj = rollout_from(env, actor, start, goal_state, &rc, &mut rng)?;
        env_steps += traj.len() as u64;
        episodes += 1;
        for &s in &traj.states {
            visits[s] += 1;
        }
        let final_state = traj.final_state();
        on_policy.push(traj.clone(), env_steps);
        replay.push(traj, env_steps);

        let steps = match config.n_d {
            Some(k) => k as u64,
            None => config.distance_steps_per_env_step.floor_mul(env_steps) - distance_steps,
        };
        let mut distance_loss = None;
        if steps > 0 {
            let fit = match (config.baseline, goal_state) {
                (Baseline::Td, Some(g)) => {
                    Some(distance.td_fit(&on_policy, g, steps as usize, config.distance_batch_size, td_cfg, &mut rng)?)
                }
                (Baseline::Td, None) => None,
                _ => Some(distance.fit(&on_policy, steps as usize, config.distance_batch_size, &mut rng)?),
            };
            if let Some(fit) = fit {
                distance_steps += steps;
                distance_loss = fit.mean_loss();
            }
        }

        if querying && env_steps >= next_query {
            let provider = provider.as_deref_mut().expect("checked above");
            let slate = on_policy.recent_final_states(config.slate_size);
            queries_used += 1;
            let out = ddlfp_choose(&slate, provider, goal_state, queries_used as u64, env_steps)?;
            if let Some(g) = out.goal {
                goal_history.push(g);
                goal = Some(g);
            }
            next_query += config.query_interval_env_steps;
        }

        if let Some(g) = goal.map(|g| g.state) {
            let stats = match config.baseline {
                Baseline::None | Baseline::Td => {
                    Some(improve(&mut policy, &distance, g, env, &replay, &improve_cfg, &mut rng)?)
                }
                Baseline::Sparse => Some(sparse_reward_improve(&mut policy, g, env, &replay, &improve_cfg, &mut rng)?),
                Baseline::Greedy => None,
            };
            if stats.is_some_and(|s| !s.goal_in_support) {
                blind_improvements += 1;
            }
        }

        let goal_state = goal.map(|g| g.state);
        let record = EpisodeMetrics {
            episode: episodes,
            env_steps,
            final_distance_to_goal: match target.or(goal_state) {
                Some(t) => bfs.distance(final_state, t)?,
                None => None,
            },
            distance_loss,
            queries_used,
            goal: goal_state,
        };
        if let Some(w) = options.metrics.as_deref_mut() {
            serde_json::to_writer(&mut *w, &record).map_err(|e| DdlError::Parse(e.to_string()))?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        if let Some(cb) = options.on_episode.as_deref_mut() {
            cb(&record);
        }
        metrics.push(record);

        if let Some(dir) = &options.checkpoint_dir {
            if config.checkpoint_every > 0 && episodes % config.checkpoint_every == 0 {
                write_checkpoints(dir, &distance, &policy)?;
            }
        }
    }
    if let Some(dir) = &options.checkpoint_dir {
        write_checkpoints(dir, &distance, &policy)?;
    }
    Ok(TrainOutcome {
        config: config.clone(),
        metrics,
        policy,
        distance,
        on_policy,
        replay,
        goal_history,
        final_goal: goal.map(|g| g.state),
        target,
        queries_used,
        env_steps,
        episodes,
        distance_steps,
        visits,
        blind_improvements,
    })
}

pub const DISTANCE_CHECKPOINT: &str = "distance.csv";
pub const POLICY_CHECKPOINT: &str = "policy.csv";

/// Writes `distance.csv` and `policy.csv` into `dir`.
pub fn write_checkpoints(dir: &Path, distance: &DistanceModel, policy: &QPolicy) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(DISTANCE_CHECKPOINT))?);
    distance.write_checkpoint(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join(POLICY_CHECKPOINT))?);
    policy.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

impl TrainOutcome {
    /// Extra improvement passes toward `goal` on the stored replay, using the
    /// run's own update rule (TD runs first refit their distance to `goal`).
    /// Greedy-descent runs have no policy to adapt.
    pub fn adapt_to_goal(&mut self, env: &dyn Env, goal: State, passes: usize, rng: &mut dyn RngCore) -> Result<()> {
        let cfg = improve_config(&self.config, self.config.n_pi);
        if self.config.baseline == Baseline::Td {
            let td = TdConfig {
                gamma: self.config.td_gamma,
                learning_rate: self.config.td_learning_rate,
            };
            let steps = passes.max(1) * self.config.n_pi;
            self.distance
                .td_fit(&self.on_policy, goal, steps, self.config.distance_batch_size, td, rng)?;
        }
        for _ in 0..passes {
            match self.config.baseline {
                Baseline::None | Baseline::Td => {
                    improve(&mut self.policy, &self.distance, goal, env, &self.replay, &cfg, rng)?;
                }
                Baseline::Sparse => {
                    sparse_reward_improve(&mut self.policy, goal, env, &self.replay, &cfg, rng)?;
                }
                Baseline::Greedy => break,
            }
        }
        Ok(())
    }

    /// Greedy evaluation of the trained agent toward `goal`.
    pub fn evaluate(&self, env: &dyn Env, goal: State, episodes: usize, rng: &mut dyn RngCore) -> Result<EvalReport> {
        match self.config.baseline {
            Baseline::Greedy => {
                let actor = GreedyDistanceActor {
                    distance: &self.distance,
                    env,
                    epsilon: 0.0,
                };
                evaluate(env, &actor, goal, episodes, rng)
            }
            _ => evaluate(env, &Greedy(&self.policy), goal, episodes, rng),
        }
    }
}

/// Rollouts with no exploration tail that stop at the goal; success means
/// reaching it within the horizon.
pub fn evaluate(
    env: &dyn Env,
    actor: &dyn Actor,
    goal: State,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalReport> {
    let cfg = RolloutConfig::evaluation(env.spec().horizon);
    let mut successes = 0;
    let mut steps = 0usize;
    for _ in 0..episodes {
        let start = env.reset(rng);
        let traj = rollout_from(env, actor, start, Some(goal), &cfg, rng)?;
        if traj.final_state() == goal {
            successes += 1;
            steps += traj.len();
        }
    }
    Ok(EvalReport {
        episodes,
        successes,
        success_rate: if episodes == 0 { 0.0 } else { successes as f64 / episodes as f64 },
        mean_steps: (successes > 0).then(|| steps as f64 / successes as f64),
    })
}

/// `d(cell, goal)` for every cell, row-major by `y`; walls are `-1`.
pub fn heatmap(distance: &dyn DistanceEstimator, maze: &GridMaze, goal: State) -> Vec<Vec<f64>> {
    (0..maze.height())
        .map(|y| {
            (0..maze.width())
                .map(|x| {
                    let s = y * maze.width() + x;
                    if maze.is_wall(s) {
                        -1.0
                    } else {
                        distance.predict(s, goal)
                    }
                })
                .collect()
        })
        .collect()
}

/// Writes [`heatmap`] as a headerless CSV matrix.
pub fn export_heatmap<W: Write>(distance: &dyn DistanceEstimator, env: &dyn Env, goal: State, w: W) -> Result<()> {
    let maze = env.as_grid().ok_or(DdlError::Unsupported("heatmaps need a grid env"))?;
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in heatmap(distance, maze, goal) {
        out.write_record(row.iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}
