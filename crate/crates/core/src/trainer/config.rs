use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DdlError, Result};
use crate::goals::MAX_SLATE;
use crate::policy::PolicyKind;

/// A positive rational `num/den`, e.g. distance steps per env step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    /// `floor(steps * num / den)`.
    pub fn floor_mul(&self, steps: u64) -> u64 {
        ((steps as u128 * self.num as u128) / self.den as u128) as u64
    }
}

impl FromStr for Ratio {
    type Err = DdlError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || DdlError::config("distance_steps_per_env_step", format!("{s:?} is not a ratio like 1/16"));
        let (num, den) = match s.split_once('/') {
            Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        if den == 0 {
            return Err(bad());
        }
        Ok(Ratio { num, den })
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ddlus,
    Ddlfp,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    None,
    Greedy,
    Td,
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    Tabular,
    Parametric,
}

/// Every hyperparameter of a training run. Loaded from flat `key = value`
/// text whose keys are exactly the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// `smaze9`, `smaze15`, `maze:<path>`, `corridor:<len>`, `open:<w>x<h>`,
    /// `pathological:<p>`, or `random:<seed>:<states>:<actions>`.
    pub env: String,
    pub horizon: usize,
    pub gamma: f64,
    /// Fixed distance-fit steps per iteration; when unset the count follows
    /// `distance_steps_per_env_step`.
    pub n_d: Option<usize>,
    /// Policy minibatch updates per iteration.
    pub n_pi: usize,
    pub lambda_d: f64,
    pub lambda_pi: f64,
    pub distance_steps_per_env_step: Ratio,
    pub distance_batch_size: usize,
    pub policy_batch_size: usize,
    pub on_policy_pool_capacity: usize,
    pub replay_pool_capacity: usize,
    pub slate_size: usize,
    pub query_interval_env_steps: u64,
    pub query_budget: u32,
    pub method: Method,
    pub baseline: Baseline,
    pub seed: u64,
    pub total_env_steps: u64,
    pub distance_model: DistanceKind,
    pub hidden_layers: Vec<usize>,
    /// Prediction for never-observed pairs; defaults to the horizon.
    pub d_max: Option<f64>,
    /// Running-mean count cap for the tabular model (EMA once reached).
    pub count_cap: Option<u64>,
    pub td_gamma: f64,
    /// Step size of the tabular TD baseline.
    pub td_learning_rate: f64,
    pub epsilon: f64,
    /// Softmax temperature; when set the policy is softmax instead of
    /// epsilon-greedy.
    pub temperature: Option<f64>,
    pub q_init: f64,
    pub explore_switch_fraction: f64,
    pub stop_at_goal: bool,
    pub explore_after_goal: bool,
    pub uniform_start: bool,
    /// Goal for `method = fixed`: a state id or `x,y` on grids. Defaults to
    /// the env's goal cell.
    pub goal: Option<String>,
    /// Hidden target for the scripted provider and the distance metric.
    pub target: Option<String>,
    /// `bfs`, `max_x`, `keep`, `index:<k>`, or `http` (interactive).
    pub provider: String,
    pub provider_timeout_secs: f64,
    /// Write checkpoints every K episodes (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            env: "smaze9".into(),
            horizon: 50,
            gamma: 0.99,
            n_d: None,
            n_pi: 16,
            lambda_d: 3e-4,
            lambda_pi: 0.5,
            distance_steps_per_env_step: Ratio { num: 1, den: 16 },
            distance_batch_size: 256,
            policy_batch_size: 64,
            on_policy_pool_capacity: 100_000,
            replay_pool_capacity: 1_000_000,
            slate_size: 5,
            query_interval_env_steps: 10_000,
            query_budget: 10,
            method: Method::Fixed,
            baseline: Baseline::None,
            seed: 0,
            total_env_steps: 200_000,
            distance_model: DistanceKind::Tabular,
            hidden_layers: vec![64, 64],
            d_max: None,
            count_cap: None,
            td_gamma: 1.0,
            td_learning_rate: 0.5,
            epsilon: 0.1,
            temperature: None,
            q_init: 0.0,
            explore_switch_fraction: 0.9,
            stop_at_goal: true,
            explore_after_goal: true,
            uniform_start: false,
            goal: None,
            target: None,
            provider: "bfs".into(),
            provider_timeout_secs: 300.0,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| DdlError::config(key, format!("cannot parse {value:?}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(DdlError::config(key, format!("expected true/false, got {value:?}"))),
    }
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl TrainerConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; unknown keys are rejected.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainerConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DdlError::Parse(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| DdlError::Parse(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "env" => self.env = v.to_string(),
            "horizon" => self.horizon = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "n_d" => self.n_d = parse_opt(key, v)?,
            "n_pi" => self.n_pi = parse(key, v)?,
            "lambda_d" => self.lambda_d = parse(key, v)?,
            "lambda_pi" => self.lambda_pi = parse(key, v)?,
            "distance_steps_per_env_step" => self.distance_steps_per_env_step = v.parse()?,
            "distance_batch_size" => self.distance_batch_size = parse(key, v)?,
            "policy_batch_size" => self.policy_batch_size = parse(key, v)?,
            "on_policy_pool_capacity" => self.on_policy_pool_capacity = parse(key, v)?,
            "replay_pool_capacity" => self.replay_pool_capacity = parse(key, v)?,
            "slate_size" => self.slate_size = parse(key, v)?,
            "query_interval_env_steps" => self.query_interval_env_steps = parse(key, v)?,
            "query_budget" => self.query_budget = parse(key, v)?,
            "method" => {
                self.method = match v.to_ascii_lowercase().as_str() {
                    "ddlus" => Method::Ddlus,
                    "ddlfp" => Method::Ddlfp,
                    "fixed" | "fixedgoal" => Method::Fixed,
                    _ => return Err(DdlError::config(key, format!("unknown method {v:?}"))),
                }
            }
            "baseline" => {
                self.baseline = match v.to_ascii_lowercase().as_str() {
                    "none" => Baseline::None,
                    "greedy" => Baseline::Greedy,
                    "td" => Baseline::Td,
                    "sparse" => Baseline::Sparse,
                    _ => return Err(DdlError::config(key, format!("unknown baseline {v:?}"))),
                }
            }
            "seed" => self.seed = parse(key, v)?,
            "total_env_steps" => self.total_env_steps = parse(key, v)?,
            "distance_model" => {
                self.distance_model = match v {
                    "tabular" => DistanceKind::Tabular,
                    "parametric" | "mlp" => DistanceKind::Parametric,
                    _ => return Err(DdlError::config(key, format!("unknown model {v:?}"))),
                }
            }
            "hidden_layers" => {
                self.hidden_layers = v
                    .split(',')
                    .map(|x| parse(key, x.trim()))
                    .collect::<Result<_>>()?
            }
            "d_max" => self.d_max = parse_opt(key, v)?,
            "count_cap" => self.count_cap = parse_opt(key, v)?,
            "td_gamma" => self.td_gamma = parse(key, v)?,
            "td_learning_rate" => self.td_learning_rate = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "temperature" => self.temperature = parse_opt(key, v)?,
            "q_init" => self.q_init = parse(key, v)?,
            "explore_switch_fraction" => self.explore_switch_fraction = parse(key, v)?,
            "stop_at_goal" => self.stop_at_goal = parse_bool(key, v)?,
            "explore_after_goal" => self.explore_after_goal = parse_bool(key, v)?,
            "uniform_start" => self.uniform_start = parse_bool(key, v)?,
            "goal" => self.goal = parse_opt(key, v)?,
            "target" => self.target = parse_opt(key, v)?,
            "provider" => self.provider = v.to_string(),
            "provider_timeout_secs" => self.provider_timeout_secs = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            _ => return Err(DdlError::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Checks every invariant; the error names the offending key.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(DdlError::config(key, format!("must be positive, got {v}")))
            }
        };
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(DdlError::config("gamma", format!("must satisfy 0 <= gamma < 1, got {}", self.gamma)));
        }
        positive("horizon", self.horizon as f64)?;
        positive("n_pi", self.n_pi as f64)?;
        if let Some(n) = self.n_d {
            positive("n_d", n as f64)?;
        }
        positive("lambda_d", self.lambda_d)?;
        positive("lambda_pi", self.lambda_pi)?;
        if self.lambda_pi > 1.0 {
            return Err(DdlError::config("lambda_pi", "tabular step size must be <= 1"));
        }
        positive("distance_steps_per_env_step", self.distance_steps_per_env_step.num as f64)?;
        positive("distance_batch_size", self.distance_batch_size as f64)?;
        positive("policy_batch_size", self.policy_batch_size as f64)?;
        positive("on_policy_pool_capacity", self.on_policy_pool_capacity as f64)?;
        positive("replay_pool_capacity", self.replay_pool_capacity as f64)?;
        positive("total_env_steps", self.total_env_steps as f64)?;
        if self.slate_size == 0 || self.slate_size > MAX_SLATE {
            return Err(DdlError::config("slate_size", format!("must be in 1..={MAX_SLATE}")));
        }
        if self.method == Method::Ddlfp {
            positive("query_interval_env_steps", self.query_interval_env_steps as f64)?;
        }
        positive("provider_timeout_secs", self.provider_timeout_secs)?;
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(DdlError::config("hidden_layers", "need at least one nonzero layer width"));
        }
        if let Some(d) = self.d_max {
            positive("d_max", d)?;
        }
        if !(0.0..=1.0).contains(&self.td_gamma) {
            return Err(DdlError::config("td_gamma", "must be in [0, 1]"));
        }
        if !(self.td_learning_rate > 0.0 && self.td_learning_rate <= 1.0) {
            return Err(DdlError::config("td_learning_rate", "must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(DdlError::config("epsilon", "must be in [0, 1]"));
        }
        if let Some(t) = self.temperature {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(DdlError::config("temperature", "must be nonnegative"));
            }
        }
        if !(0.0..=1.0).contains(&self.explore_switch_fraction) {
            return Err(DdlError::config("explore_switch_fraction", "must be in [0, 1]"));
        }
        if self.baseline == Baseline::Td && self.distance_model != DistanceKind::Tabular {
            return Err(DdlError::config("baseline", "the TD baseline needs distance_model = tabular"));
        }
        Ok(())
    }

    pub fn d_max(&self) -> f64 {
        self.d_max.unwrap_or(self.horizon as f64)
    }

    pub fn policy_kind(&self) -> PolicyKind {
        match self.temperature {
            Some(temperature) => PolicyKind::Softmax { temperature },
            None => PolicyKind::EpsilonGreedy { epsilon: self.epsilon },
        }
    }

    /// Canonical `key = value` dump; parsing it back gives an equal config.
    pub fn to_kv(&self) -> String {
        let method = match self.method {
            Method::Ddlus => "ddlus",
            Method::Ddlfp => "ddlfp",
            Method::Fixed => "fixed",
        };
        let baseline = match self.baseline {
            Baseline::None => "none",
            Baseline::Greedy => "greedy",
            Baseline::Td => "td",
            Baseline::Sparse => "sparse",
        };
        let model = match self.distance_model {
            DistanceKind::Tabular => "tabular",
            DistanceKind::Parametric => "parametric",
        };
        let layers: Vec<String> = self.hidden_layers.iter().map(|w| w.to_string()).collect();
        let rows: Vec<(&str, String)> = vec![
            ("env", self.env.clone()),
            ("horizon", self.horizon.to_string()),
            ("gamma", self.gamma.to_string()),
            ("n_d", opt_str(&self.n_d)),
            ("n_pi", self.n_pi.to_string()),
            ("lambda_d", self.lambda_d.to_string()),
            ("lambda_pi", self.lambda_pi.to_string()),
            ("distance_steps_per_env_step", self.distance_steps_per_env_step.to_string()),
            ("distance_batch_size", self.distance_batch_size.to_string()),
            ("policy_batch_size", self.policy_batch_size.to_string()),
            ("on_policy_pool_capacity", self.on_policy_pool_capacity.to_string()),
            ("replay_pool_capacity", self.replay_pool_capacity.to_string()),
            ("slate_size", self.slate_size.to_string()),
            ("query_interval_env_steps", self.query_interval_env_steps.to_string()),
            ("query_budget", self.query_budget.to_string()),
            ("method", method.into()),
            ("baseline", baseline.into()),
            ("seed", self.seed.to_string()),
            ("total_env_steps", self.total_env_steps.to_string()),
            ("distance_model", model.into()),
            ("hidden_layers", layers.join(",")),
            ("d_max", opt_str(&self.d_max)),
            ("count_cap", opt_str(&self.count_cap)),
            ("td_gamma", self.td_gamma.to_string()),
            ("td_learning_rate", self.td_learning_rate.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("temperature", opt_str(&self.temperature)),
            ("q_init", self.q_init.to_string()),
            ("explore_switch_fraction", self.explore_switch_fraction.to_string()),
            ("stop_at_goal", self.stop_at_goal.to_string()),
            ("explore_after_goal", self.explore_after_goal.to_string()),
            ("uniform_start", self.uniform_start.to_string()),
            ("goal", opt_str(&self.goal)),
            ("target", opt_str(&self.target)),
            ("provider", self.provider.clone()),
            ("provider_timeout_secs", self.provider_timeout_secs.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainerConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_file_and_rejects_unknown_keys() {
        let cfg = TrainerConfig::from_kv(
            "# comment\nenv = corridor:40\nmethod = DDLUS\ndistance_steps_per_env_step = 1/64 # trailing\n",
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Ddlus);
        assert_eq!(cfg.distance_steps_per_env_step, Ratio { num: 1, den: 64 });
        let err = TrainerConfig::from_kv("colour = blue\n").unwrap_err();
        assert!(err.to_string().contains("colour"));
    }

    #[test]
    fn gamma_must_be_below_one() {
        let mut cfg = TrainerConfig::default();
        cfg.apply_override("gamma=1.5").unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = TrainerConfig::default();
        cfg.apply_override("goal=3,4").unwrap();
        cfg.apply_override("temperature=0.5").unwrap();
        cfg.apply_override("n_d=7").unwrap();
        assert_eq!(TrainerConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn ratio_floor() {
        let r: Ratio = "1/16".parse().unwrap();
        assert_eq!(r.floor_mul(100_000), 6250);
        assert_eq!(r.floor_mul(15), 0);
        assert!("1/0".parse::<Ratio>().is_err());
    }

    #[test]
    fn sixteenth_ratio_large_pool_config() {
        let cfg = TrainerConfig::from_kv("distance_steps_per_env_step = 1/16\non_policy_pool_capacity = 100000\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.distance_steps_per_env_step.to_string(), "1/16");
        assert_eq!(cfg.on_policy_pool_capacity, 100_000);
    }
}
