//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::Command;
use std::time::Instant;

use ddl_core::distance::DistanceEstimator;
use ddl_core::env::State;
use ddl_core::goals::PreferenceProvider;
use ddl_core::oracle::bfs_to;
use ddl_core::stats::{kendall_tau_b, spearman};
use ddl_core::trainer::{
    build_env, designated_start, export_heatmap, scripted_provider, train, BuiltEnv, EpisodeMetrics,
    TrainOptions, TrainOutcome, TrainerConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Verdict = (bool, String);
type Criterion = (&'static str, fn() -> Verdict);

fn config(overrides: &[&str], seed: u64) -> TrainerConfig {
    let mut cfg = TrainerConfig::default();
    for kv in overrides {
        cfg.apply_override(kv).unwrap();
    }
    cfg.seed = seed;
    cfg
}

fn run(cfg: &TrainerConfig, on_episode: Option<&mut dyn FnMut(&EpisodeMetrics)>) -> (BuiltEnv, TrainOutcome) {
    let built = build_env(&cfg.env, cfg.horizon, cfg.uniform_start).unwrap();
    let mut provider = scripted_provider(&built, cfg).ok();
    let options = TrainOptions {
        on_episode,
        ..TrainOptions::default()
    };
    let outcome = train(
        &built,
        cfg,
        provider.as_deref_mut().map(|p| p as &mut dyn PreferenceProvider),
        options,
    )
    .unwrap();
    (built, outcome)
}

/// Runs `ddl verify` and returns (exit code, records, seconds).
fn verify(suite: &str, seeds: usize) -> (Option<i32>, Vec<Value>, f64) {
    let t0 = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_ddl"))
        .args(["verify", "--suite", suite, "--seeds", &seeds.to_string()])
        .output()
        .unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let records = String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect();
    (out.status.code(), records, secs)
}

fn failed(records: &[Value]) -> usize {
    records.iter().filter(|r| r["passed"] != true).count()
}

fn policy_iteration() -> Verdict {
    let (code, records, secs) = verify("policy-iteration", 100);
    let ok = code == Some(0) && records.len() == 100 && failed(&records) == 0 && secs < 60.0;
    (ok, format!("{} MDPs, {} violations, exit {code:?}, {secs:.1}s", records.len(), failed(&records)))
}

fn heatmap() -> Verdict {
    let cfg = config(&["env=smaze9", "method=fixed", "uniform_start=true", "total_env_steps=200000"], 0);
    let (built, out) = run(&cfg, None);
    let env = built.env.as_ref();
    let goal = out.final_goal.unwrap();
    let mut csv = Vec::new();
    export_heatmap(&out.distance, env, goal, &mut csv).unwrap();
    let cells: Vec<f64> = String::from_utf8(csv)
        .unwrap()
        .lines()
        .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    let truth = bfs_to(env, goal).unwrap();
    let (mut all, mut all_bfs, mut seen, mut seen_bfs) = (vec![], vec![], vec![], vec![]);
    for (s, &d) in cells.iter().enumerate() {
        let Some(t) = truth[s] else { continue };
        all.push(d);
        all_bfs.push(t as f64);
        if out.visits[s] >= 10 {
            seen.push(d);
            seen_bfs.push(t as f64);
        }
    }
    let (rho, rho_seen) = (spearman(&all, &all_bfs), spearman(&seen, &seen_bfs));
    (
        rho >= 0.95 && rho_seen >= 0.99,
        format!(
            "spearman {rho:.4} over {} cells, {rho_seen:.4} over {} visited cells",
            all.len(),
            seen.len()
        ),
    )
}

fn pathological() -> Verdict {
    let (code, records, _) = verify("pathological", 10);
    let learned = records.iter().find(|r| r["check"] == "learned-safe-p0.1");
    let safe = learned.map(|r| r["detail"]["safe"].clone()).unwrap_or(Value::Null);
    (
        code == Some(0) && records.len() == 6 && failed(&records) == 0,
        format!(
            "{} checks, {} failed (crossover, 4 branch rows, learned safe {safe}/10)",
            records.len(),
            failed(&records)
        ),
    )
}

fn cumulative_identity() -> Verdict {
    let (code, records, _) = verify("cumulative-identity", 0);
    let exact_ok = records
        .iter()
        .filter(|r| r["detail"]["exact"] == true)
        .all(|r| r["detail"]["diff"].as_f64().is_some_and(|d| d.abs() < 1e-9));
    (
        code == Some(0) && records.len() == 20 && failed(&records) == 0 && exact_ok,
        format!("{} pairs, {} disagree", records.len(), failed(&records)),
    )
}

const PREFERENCE_RUN: &[&str] = &[
    "env=smaze15",
    "horizon=100",
    "method=ddlfp",
    "provider=bfs",
    "target=14,14",
    "slate_size=5",
    "query_budget=10",
    "query_interval_env_steps=10000",
    "total_env_steps=110000",
    "stop_at_goal=false",
];

/// Trains a preference run, adapts to the hidden target and evaluates.
/// Returns the success rate and the distance MSE against BFS at the target.
fn preference_trial(baseline: &str, seed: u64) -> (f64, f64) {
    let mut kv = PREFERENCE_RUN.to_vec();
    let b = format!("baseline={baseline}");
    kv.push(&b);
    let cfg = config(&kv, seed);
    let (built, mut out) = run(&cfg, None);
    let env = built.env.as_ref();
    let target = out.target.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    out.adapt_to_goal(env, target, 500, &mut rng).unwrap();
    let report = out.evaluate(env, target, 50, &mut rng).unwrap();
    let truth = bfs_to(env, target).unwrap();
    let errs: Vec<f64> = (0..truth.len())
        .filter_map(|s| truth[s].map(|t| (out.distance.predict(s, target) - t as f64).powi(2)))
        .collect();
    let mse = errs.iter().sum::<f64>() / errs.len() as f64;
    (report.success_rate, mse)
}

fn preferences() -> Verdict {
    let rates: Vec<f64> = (0..5).map(|seed| preference_trial("none", seed).0).collect();
    let good = rates.iter().filter(|&&r| r >= 0.9).count();
    (good >= 4, format!("success rates {rates:?}, {good}/5 seeds ≥ 0.9"))
}

fn unsupervised() -> Verdict {
    let total = 20_000u64;
    let cfg = config(
        &[
            "env=corridor:40",
            "horizon=60",
            "method=ddlus",
            "stop_at_goal=false",
            "total_env_steps=20000",
        ],
        0,
    );
    let mut marks: Vec<Option<State>> = Vec::new();
    let mut record = |m: &EpisodeMetrics| {
        while marks.len() < 20 && m.env_steps >= (marks.len() as u64 + 1) * total / 20 {
            marks.push(m.goal);
        }
    };
    let (built, _) = run(&cfg, Some(&mut record));
    let env = built.env.as_ref();
    let s0 = designated_start(env);
    let from_start = bfs_to(env, s0).unwrap();
    let reach = from_start.iter().flatten().copied().max().unwrap() as f64;
    let dist: Vec<f64> = marks
        .iter()
        .map(|g| g.map_or(0.0, |g| bfs_to(env, g).unwrap()[s0].unwrap() as f64))
        .collect();
    let idx: Vec<f64> = (0..dist.len()).map(|i| i as f64).collect();
    let tau = kendall_tau_b(&idx, &dist);
    let last = *dist.last().unwrap();
    (
        marks.len() == 20 && tau >= 0.6 && last >= 0.8 * reach,
        format!("kendall tau {tau:.3}, final goal {last} of {reach} reachable"),
    )
}

fn ablation() -> Verdict {
    let mut rows = Vec::new();
    let (mut beats_greedy, mut beats_sparse) = (0, 0);
    let mut td_mse = Vec::new();
    for seed in 0..5 {
        let (ddl, ddl_mse) = preference_trial("none", seed);
        let greedy = preference_trial("greedy", seed).0;
        let sparse = preference_trial("sparse", seed).0;
        let (td, mse) = preference_trial("td", seed);
        beats_greedy += usize::from(ddl >= greedy);
        beats_sparse += usize::from(ddl >= sparse);
        td_mse.push(mse);
        rows.push(format!(
            "seed {seed}: success ddl {ddl} greedy {greedy} sparse {sparse} td {td}, mse ddl {ddl_mse:.1} td {mse:.1}"
        ));
    }
    (
        beats_greedy >= 4 && beats_sparse >= 4 && td_mse.iter().all(|m| m.is_finite()),
        format!(
            "ddl ≥ greedy {beats_greedy}/5, ddl ≥ sparse {beats_sparse}/5, td completed; {}",
            rows.join("; ")
        ),
    )
}

fn gradient() -> Verdict {
    let (code, records, secs) = verify("gradient", 100);
    let detail = records.first().map(|r| r["detail"].clone()).unwrap_or(Value::Null);
    (
        code == Some(0) && detail["configs"] == 100 && failed(&records) == 0 && secs < 10.0,
        format!(
            "{} networks, {} failures, worst relative error {:.2e}, {secs:.1}s",
            detail["configs"],
            detail["failures"],
            detail["max_relative_error"].as_f64().unwrap_or(f64::NAN)
        ),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let train_into = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ddl"))
            .args(["train", "--seed", "3", "--out", out.to_str().unwrap()])
            .args(["--set", "env=smaze15", "--set", "horizon=100", "--set", "method=ddlfp"])
            .args(["--set", "target=14,14", "--set", "query_interval_env_steps=5000"])
            .args(["--set", "total_env_steps=40000", "--set", "stop_at_goal=false"])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("metrics.jsonl")).unwrap()
    };
    let (a, b) = (train_into("a"), train_into("b"));
    (
        !a.is_empty() && a == b,
        format!("{} bytes of metrics, identical: {}", a.len(), a == b),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("policy iteration never increases distance", policy_iteration),
        ("learned distance heatmap ranks like BFS", heatmap),
        ("pathological MDP branches", pathological),
        ("cumulative distance identity", cumulative_identity),
        ("preference-driven goals reach the hidden target", preferences),
        ("unsupervised goals move outward", unsupervised),
        ("ablation against baselines", ablation),
        ("parametric gradients match finite differences", gradient),
        ("identical runs give identical metrics", determinism),
    ];
    // sequential: the timed criteria must not compete for cores
    let verdicts: Vec<(Verdict, f64)> = criteria
        .iter()
        .map(|&(_, check)| {
            let t0 = Instant::now();
            let v = check();
            (v, t0.elapsed().as_secs_f64())
        })
        .collect();
    let mut failures = 0;
    for (i, ((name, _), ((ok, detail), secs))) in criteria.iter().zip(&verdicts).enumerate() {
        failures += usize::from(!ok);
        println!(
            "{} criterion {}: {name} — {detail} [{secs:.1}s]",
            if *ok { "PASS" } else { "FAIL" },
            i + 1
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
