//! Property suites behind the `verify` command. Every check yields one
//! machine-readable record.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::distance::{MlpDistance, StateEncoder};
use crate::env::{Env, GridMaze, PathologicalMdp, PathologicalState, RandomDeterministicMdp, State};
use crate::error::{DdlError, Result};
use crate::oracle::{
    cumulative_identity_check, ddl_exact_policy_iteration, pathological_branch_analysis, pathological_crossover,
    BranchChoice, StationaryPolicy,
};
use crate::trainer::{build_env, train, TrainOptions, TrainerConfig};

/// Smallest `p` at which the cumulative objective prefers the risky branch
/// for `gamma = 0.99`, `d_max = 20`, `T = 20`: the closed form
/// `1 - (g + g^2) / (D sum_{t=2}^{T-1} g^t)` evaluated independently in
/// double precision.
pub const PATHOLOGICAL_CROSSOVER: f64 = 0.9939266822797028;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    PolicyIteration,
    CumulativeIdentity,
    Pathological,
    Gradient,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::PolicyIteration,
        Suite::CumulativeIdentity,
        Suite::Pathological,
        Suite::Gradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::PolicyIteration => "policy-iteration",
            Suite::CumulativeIdentity => "cumulative-identity",
            Suite::Pathological => "pathological",
            Suite::Gradient => "gradient",
        }
    }

    pub fn parse(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub suite: String,
    pub check: String,
    pub passed: bool,
    pub detail: Value,
}

fn record(suite: Suite, check: impl Into<String>, passed: bool, detail: Value) -> CheckRecord {
    CheckRecord {
        suite: suite.name().into(),
        check: check.into(),
        passed,
        detail,
    }
}

/// Runs `suite`; `seeds` scales the number of sampled instances where the
/// suite has any (0 picks the suite's default).
pub fn run_suite(suite: Suite, seeds: usize) -> Result<Vec<CheckRecord>> {
    match suite {
        Suite::PolicyIteration => policy_iteration_suite(if seeds == 0 { 100 } else { seeds }),
        Suite::CumulativeIdentity => cumulative_identity_suite(),
        Suite::Pathological => pathological_suite(if seeds == 0 { 10 } else { seeds }),
        Suite::Gradient => gradient_suite(if seeds == 0 { 100 } else { seeds }),
    }
}

/// Exact DDL policy iteration on seeded random deterministic MDPs, toward
/// every state as goal: distances never increase between rounds and the
/// fixpoint equals the shortest-path distance.
pub fn policy_iteration_suite(seeds: usize) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::with_capacity(seeds);
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=64);
        let a = rng.gen_range(1..=4);
        let mdp = RandomDeterministicMdp::generate(seed, n, a, 2 * n)?;
        let (mut violations, mut mismatched, mut unconverged, mut max_rounds) = (0, 0, 0, 0);
        for goal in 0..n {
            let r = ddl_exact_policy_iteration(&mdp, goal, 0.95, 200, StationaryPolicy::uniform(n, a))?;
            violations += r.monotonicity_violations.len();
            mismatched += usize::from(!r.fixpoint_matches_bfs);
            unconverged += usize::from(!r.converged);
            max_rounds = max_rounds.max(r.rounds.len());
        }
        out.push(record(
            Suite::PolicyIteration,
            format!("random-mdp-{seed}"),
            violations == 0 && mismatched == 0 && unconverged == 0,
            json!({
                "states": n,
                "actions": a,
                "goals": n,
                "monotonicity_violations": violations,
                "fixpoint_mismatches": mismatched,
                "unconverged": unconverged,
                "max_rounds": max_rounds,
            }),
        ));
    }
    Ok(out)
}

struct IdentityCase {
    name: String,
    env: Box<dyn Env>,
    policy: StationaryPolicy,
    goal: State,
    gamma: f64,
    horizon: usize,
}

fn identity_cases() -> Result<Vec<IdentityCase>> {
    let mut cases = Vec::new();
    for k in 1..=5usize {
        cases.push(IdentityCase {
            name: format!("chain-{k}"),
            env: Box::new(RandomDeterministicMdp::chain(k + 1, 20)?),
            policy: StationaryPolicy::deterministic(&vec![0; k + 1], 1),
            goal: k,
            gamma: if k % 2 == 0 { 1.0 } else { 0.9 },
            horizon: 20,
        });
    }
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mdp = RandomDeterministicMdp::generate(seed, 12, 3, 30)?.with_uniform_start();
        let actions: Vec<usize> = (0..12).map(|_| rng.gen_range(0..3)).collect();
        cases.push(IdentityCase {
            name: format!("random-mdp-{seed}-deterministic-policy"),
            goal: mdp.goal(),
            env: Box::new(mdp),
            policy: StationaryPolicy::deterministic(&actions, 3),
            gamma: 0.95,
            horizon: 30,
        });
    }
    for p in [0.1, 0.5, 0.9] {
        cases.push(IdentityCase {
            name: format!("pathological-{p}-uniform"),
            env: Box::new(PathologicalMdp::new(p, 20)?),
            policy: StationaryPolicy::uniform(PathologicalMdp::STATE_COUNT, 2),
            goal: PathologicalState::Goal as usize,
            gamma: 0.99,
            horizon: 20,
        });
    }
    let mazes: [(&str, GridMaze, State, f64); 3] = [
        ("open-3x3-uniform", GridMaze::open(3, 3, (0, 0), 12)?, 8, 0.95),
        ("corridor-5-uniform", GridMaze::corridor(5, 15)?, 4, 0.9),
        ("open-4x4-uniform-start", GridMaze::open(4, 4, (0, 0), 16)?.with_uniform_start(), 15, 0.99),
    ];
    for (name, maze, goal, gamma) in mazes {
        let horizon = maze.spec().horizon;
        let n = maze.width() * maze.height();
        cases.push(IdentityCase {
            name: name.into(),
            env: Box::new(maze),
            policy: StationaryPolicy::uniform(n, 5),
            goal,
            gamma,
            horizon,
        });
    }
    for seed in 10..14u64 {
        let mdp = RandomDeterministicMdp::generate(seed, 10, 3, 20)?;
        cases.push(IdentityCase {
            name: format!("random-mdp-{seed}-uniform-policy"),
            goal: mdp.goal(),
            env: Box::new(mdp),
            policy: StationaryPolicy::uniform(10, 3),
            gamma: 0.9,
            horizon: 20,
        });
    }
    Ok(cases)
}

/// Nested and collapsed forms of the cumulative distance objective on 20
/// (env, policy) pairs: exact agreement when both are deterministic,
/// within 4 standard errors otherwise.
pub fn cumulative_identity_suite() -> Result<Vec<CheckRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    identity_cases()?
        .into_iter()
        .map(|c| {
            let r = cumulative_identity_check(c.env.as_ref(), &c.policy, c.goal, c.gamma, c.horizon, 20_000, &mut rng)?;
            Ok(record(
                Suite::CumulativeIdentity,
                c.name,
                r.agrees(),
                serde_json::to_value(r).map_err(|e| DdlError::Parse(e.to_string()))?,
            ))
        })
        .collect()
}

/// Training config for the learned risky/safe check.
pub fn pathological_train_config(p: f64, seed: u64) -> TrainerConfig {
    TrainerConfig {
        env: format!("pathological:{p}"),
        horizon: 20,
        gamma: 0.99,
        method: crate::trainer::Method::Fixed,
        total_env_steps: 4000,
        seed,
        ..TrainerConfig::default()
    }
}

/// Exact branch analysis, the crossover golden value, and the learned
/// tabular pipeline choosing the safe branch at `p = 0.1`.
pub fn pathological_suite(seeds: usize) -> Result<Vec<CheckRecord>> {
    let (gamma, d_max, horizon) = (0.99, 20.0, 20);
    let mut out = Vec::new();
    let crossover = pathological_crossover(gamma, d_max, horizon)?;
    out.push(record(
        Suite::Pathological,
        "crossover",
        (crossover - PATHOLOGICAL_CROSSOVER).abs() < 1e-9,
        json!({ "computed": crossover, "golden": PATHOLOGICAL_CROSSOVER }),
    ));
    for row in pathological_branch_analysis(&[0.01, 0.1, 0.5, 0.99], gamma, d_max, horizon)? {
        let passed = row.greedy == BranchChoice::Risky && (row.p >= crossover || row.cumulative == BranchChoice::Safe);
        out.push(record(
            Suite::Pathological,
            format!("branches-p{}", row.p),
            passed,
            serde_json::to_value(row).map_err(|e| DdlError::Parse(e.to_string()))?,
        ));
    }
    let mut safe = 0;
    let mut choices = Vec::new();
    for seed in 0..seeds as u64 {
        let cfg = pathological_train_config(0.1, seed);
        let built = build_env(&cfg.env, cfg.horizon, false)?;
        let outcome = train(&built, &cfg, None, TrainOptions::default())?;
        let a = outcome
            .policy
            .greedy_action(PathologicalState::S0 as usize, PathologicalState::Goal as usize);
        let choice = if a == PathologicalMdp::SAFE { BranchChoice::Safe } else { BranchChoice::Risky };
        safe += usize::from(choice == BranchChoice::Safe);
        choices.push(choice);
    }
    let needed = (seeds * 9).div_ceil(10);
    out.push(record(
        Suite::Pathological,
        "learned-safe-p0.1",
        safe >= needed,
        json!({ "seeds": seeds, "safe": safe, "needed": needed, "choices": choices }),
    ));
    Ok(out)
}

/// Backprop against central differences for `configs` randomly initialized
/// networks of several shapes.
pub fn gradient_suite(configs: usize) -> Result<Vec<CheckRecord>> {
    let shapes: [&[usize]; 5] = [&[8], &[16, 16], &[32, 32], &[12, 8, 6], &[64, 64]];
    let encoders = [
        StateEncoder::Grid { width: 9, height: 9 },
        StateEncoder::OneHot(10),
    ];
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for i in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let encoder = encoders[i % encoders.len()];
        let n = match encoder {
            StateEncoder::Grid { width, height } => width * height,
            StateEncoder::OneHot(n) => n,
        };
        let mut m = MlpDistance::new(encoder, shapes[i % shapes.len()], 1e-3, 50.0, &mut rng);
        // spread the weights beyond the initializer's range
        let scale = rng.gen_range(0.5..2.0);
        let params: Vec<f64> = m.params().iter().map(|w| w * scale).collect();
        m.set_params(&params);
        let batch: Vec<(State, State, f64)> = (0..4)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0.0..30.0)))
            .collect();
        let err = m.gradient_check(&batch, 1e-6);
        worst = worst.max(err);
        failures += usize::from(!(err < 1e-4));
    }
    Ok(vec![record(
        Suite::Gradient,
        "central-differences",
        failures == 0,
        json!({ "configs": configs, "failures": failures, "max_relative_error": worst, "tolerance": 1e-4 }),
    )])
}
