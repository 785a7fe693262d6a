//! The `ddl` command: train, eval, verify, heatmap and serve.

mod mailbox;
mod serve;

pub use mailbox::{HttpProvider, Mailbox, PendingQuery, RespondError};
pub use serve::{router, serve, ServerState, Status};

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ddl_core::distance::DistanceModel;
use ddl_core::env::State;
use ddl_core::goals::{PreferenceProvider, PreferenceQuery, PreferenceResponse, ProviderError};
use ddl_core::policy::{Greedy, GreedyDistanceActor, QPolicy};
use ddl_core::trainer::{
    build_env, evaluate, export_heatmap, parse_state, scripted_provider, state_encoder, train, Baseline, BuiltEnv,
    Method, TrainOptions, TrainerConfig, DISTANCE_CHECKPOINT, POLICY_CHECKPOINT,
};
use ddl_core::verify::{run_suite, Suite};
use ddl_core::DdlError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const CONFIG_FILE: &str = "config.cfg";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Runtime(_) => 1,
            CliError::Verify(_) => 2,
        }
    }
}

impl From<DdlError> for CliError {
    fn from(e: DdlError) -> Self {
        match e {
            DdlError::Config { .. } | DdlError::Parse(_) | DdlError::InvalidState(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ddl", version, about = "Dynamical distance learning on small discrete environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "ddl-out")]
    pub out: PathBuf,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and write metrics and checkpoints.
    Train(Common),
    /// Greedy evaluation of a policy checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding the checkpoints (defaults to `--out`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Goal as a state id or `x,y`; defaults to the target, the goal, or
        /// the env's goal cell.
        #[arg(long)]
        goal: Option<String>,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
    },
    /// Run property suites and print one JSON line per check.
    Verify {
        /// policy-iteration, cumulative-identity, pathological, gradient, or all.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Instances per suite (0: the suite's default).
        #[arg(long, default_value_t = 0)]
        seeds: usize,
        /// Also write the report to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the learned distance to a goal as a CSV matrix.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        goal: Option<String>,
    },
    /// Interactive preference-driven training behind an HTTP endpoint.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train(common) => cmd_train(&common),
        Command::Eval {
            common,
            checkpoint,
            goal,
            episodes,
        } => cmd_eval(&common, checkpoint.as_deref(), goal.as_deref(), episodes),
        Command::Verify { suite, seeds, out } => cmd_verify(&suite, seeds, out.as_deref()),
        Command::Heatmap {
            common,
            checkpoint,
            goal,
        } => cmd_heatmap(&common, checkpoint.as_deref(), goal.as_deref()),
        Command::Serve { common, host, port } => {
            let (cfg, built) = load(&common)?;
            serve::serve(cfg, built, &common.out, &host, port)
        }
    }
}

/// Config file, then overrides, then `--seed`; validated.
pub fn load_config(common: &Common) -> CliResult<TrainerConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            TrainerConfig::from_kv(&text)?
        }
        None => TrainerConfig::default(),
    };
    for kv in &common.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load(common: &Common) -> CliResult<(TrainerConfig, BuiltEnv)> {
    let cfg = load_config(common)?;
    let built = build_env(&cfg.env, cfg.horizon, cfg.uniform_start)?;
    Ok((cfg, built))
}

/// One line of the query log.
#[derive(Debug, Clone, Serialize)]
pub struct QueryLogEntry {
    #[serde(flatten)]
    pub query: PreferenceQuery,
    pub choice_index: Option<usize>,
    pub error: Option<ProviderError>,
}

/// Appends every query and its outcome to a JSON-lines sink.
pub struct LoggingProvider<'a, P: ?Sized> {
    pub inner: &'a mut P,
    pub log: Box<dyn Write + 'a>,
}

impl<P: PreferenceProvider + ?Sized> PreferenceProvider for LoggingProvider<'_, P> {
    fn ask(&mut self, query: &PreferenceQuery) -> Result<PreferenceResponse, ProviderError> {
        let result = self.inner.ask(query);
        let entry = QueryLogEntry {
            query: query.clone(),
            choice_index: result.as_ref().ok().map(|r| r.choice_index),
            error: result.as_ref().err().cloned(),
        };
        // the log is best effort; training must not fail on it
        if let Ok(line) = serde_json::to_string(&entry) {
            let _ = writeln!(self.log, "{line}").and_then(|_| self.log.flush());
        }
        result
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn cmd_train(common: &Common) -> CliResult<()> {
    let (cfg, built) = load(common)?;
    if cfg.provider == "http" {
        return Err(CliError::Config("provider = http needs the serve command".into()));
    }
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join(CONFIG_FILE), cfg.to_kv())?;
    let mut metrics = create(&common.out.join(METRICS_FILE))?;
    let mut scripted = match cfg.method {
        Method::Ddlfp => Some(scripted_provider(&built, &cfg)?),
        _ => None,
    };
    let mut logging = match scripted.as_deref_mut() {
        Some(p) => Some(LoggingProvider {
            inner: p,
            log: Box::new(create(&common.out.join(QUERIES_FILE))?),
        }),
        None => None,
    };
    let outcome = train(
        &built,
        &cfg,
        logging.as_mut().map(|p| p as &mut dyn PreferenceProvider),
        TrainOptions {
            metrics: Some(&mut metrics),
            checkpoint_dir: Some(common.out.clone()),
            ..Default::default()
        },
    )?;
    metrics.flush()?;
    eprintln!(
        "trained {} episodes, {} env steps, {} queries; final goal {:?}",
        outcome.episodes, outcome.env_steps, outcome.queries_used, outcome.final_goal
    );
    Ok(())
}

/// `--goal`, else the config's target, else its goal, else the env's goal.
fn pick_goal(cfg: &TrainerConfig, built: &BuiltEnv, goal: Option<&str>) -> CliResult<State> {
    let env = built.env.as_ref();
    if let Some(g) = goal {
        return Ok(parse_state(env, "goal", g)?);
    }
    for (key, v) in [("target", &cfg.target), ("goal", &cfg.goal)] {
        if let Some(v) = v {
            return Ok(parse_state(env, key, v)?);
        }
    }
    built
        .default_goal
        .ok_or_else(|| CliError::Config("no goal: pass --goal or set target/goal".into()))
}

fn read_distance(dir: &Path, built: &BuiltEnv) -> CliResult<DistanceModel> {
    let path = dir.join(DISTANCE_CHECKPOINT);
    let file = File::open(&path).map_err(|e| CliError::Runtime(format!("cannot open {}: {e}", path.display())))?;
    Ok(DistanceModel::read_checkpoint(file, Some(state_encoder(built.env.as_ref())?))?)
}

fn cmd_eval(common: &Common, checkpoint: Option<&Path>, goal: Option<&str>, episodes: usize) -> CliResult<()> {
    let (cfg, built) = load(common)?;
    let dir = checkpoint.unwrap_or(&common.out);
    let goal = pick_goal(&cfg, &built, goal)?;
    let env = built.env.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = if cfg.baseline == Baseline::Greedy {
        let distance = read_distance(dir, &built)?;
        let actor = GreedyDistanceActor {
            distance: &distance,
            env,
            epsilon: 0.0,
        };
        evaluate(env, &actor, goal, episodes, &mut rng)?
    } else {
        let path = dir.join(POLICY_CHECKPOINT);
        let file = File::open(&path).map_err(|e| CliError::Runtime(format!("cannot open {}: {e}", path.display())))?;
        let policy = QPolicy::read_csv(file)?;
        evaluate(env, &Greedy(&policy), goal, episodes, &mut rng)?
    };
    let line = serde_json::json!({ "goal": goal, "report": report }).to_string();
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("eval.json"), format!("{line}\n"))?;
    println!("{line}");
    Ok(())
}

fn cmd_verify(suite: &str, seeds: usize, out: Option<&Path>) -> CliResult<()> {
    let suites: Vec<Suite> = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::parse(suite).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
            CliError::Config(format!("unknown suite {suite:?}; expected one of {} or all", names.join(", ")))
        })?]
    };
    let mut report = String::new();
    let (mut passed, mut failed) = (0, 0);
    let stdout = std::io::stdout();
    for s in suites {
        for r in run_suite(s, seeds)? {
            let line = serde_json::to_string(&r).map_err(|e| CliError::Runtime(e.to_string()))?;
            writeln!(stdout.lock(), "{line}")?;
            report.push_str(&line);
            report.push('\n');
            if r.passed {
                passed += 1;
            } else {
                failed += 1;
            }
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("verify.jsonl"), &report)?;
    }
    eprintln!("{passed} passed, {failed} failed");
    if failed > 0 {
        return Err(CliError::Verify(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn cmd_heatmap(common: &Common, checkpoint: Option<&Path>, goal: Option<&str>) -> CliResult<()> {
    let (cfg, built) = load(common)?;
    if built.env.as_grid().is_none() {
        return Err(CliError::Config(format!("env {:?} is not a grid", cfg.env)));
    }
    let goal = pick_goal(&cfg, &built, goal)?;
    let distance = read_distance(checkpoint.unwrap_or(&common.out), &built)?;
    fs::create_dir_all(&common.out)?;
    let path = common.out.join("heatmap.csv");
    export_heatmap(&distance, built.env.as_ref(), goal, create(&path)?)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
