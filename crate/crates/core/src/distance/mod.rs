//! Dynamical distance estimation.
//!
//! A distance model estimates `d(s, s')`, the expected number of steps the
//! data-collecting policy takes to get from `s` to `s'` given that both are
//! visited in one episode. It is trained by plain regression on the time
//! gap `j - i` between states drawn from the same trajectory, with `i`
//! uniform over the trajectory and `j` uniform over `[i, T]`.
//!
//! A TD(0) estimator of the distance to a single goal is provided as an
//! ablation baseline; the main algorithm never uses it.

mod mlp;
mod tabular;

pub use mlp::{MlpDistance, StateEncoder};
pub use tabular::TabularDistance;

use std::io::{Read, Write};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::State;
use crate::error::{DdlError, Result};
use crate::trajectory::TrajectoryPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub s_i: State,
    pub s_j: State,
    /// `j - i`.
    pub gap: usize,
}

/// Read access to a distance estimate.
pub trait DistanceEstimator {
    /// Estimated steps from `s` to `t`; never negative.
    fn predict(&self, s: State, t: State) -> f64;

    /// Whether `(s, t)` has ever been trained. Parametric models generalize,
    /// so they always report true.
    fn has_support(&self, _s: State, _t: State) -> bool {
        true
    }
}

impl<D: DistanceEstimator + ?Sized> DistanceEstimator for &D {
    fn predict(&self, s: State, t: State) -> f64 {
        (**self).predict(s, t)
    }

    fn has_support(&self, s: State, t: State) -> bool {
        (**self).has_support(s, t)
    }
}

/// Draws `count` regression pairs from the pool: trajectory uniform, then
/// `i ~ U[0, T]`, `j ~ U[i, T]`.
pub fn sample_pairs(pool: &TrajectoryPool, count: usize, rng: &mut dyn RngCore) -> Result<Vec<PairSample>> {
    if pool.is_empty() {
        return Err(DdlError::EmptyPool);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let traj = pool.get(rng.gen_range(0..pool.len())).expect("index in range");
        let last = traj.len();
        let i = rng.gen_range(0..=last);
        let j = rng.gen_range(i..=last);
        out.push(PairSample {
            s_i: traj.states[i],
            s_j: traj.states[j],
            gap: j - i,
        });
    }
    Ok(out)
}

/// Mean regression loss `0.5 * (d - gap)^2` of each fit step, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub losses: Vec<f64>,
}

impl FitStats {
    pub fn mean_loss(&self) -> Option<f64> {
        (!self.losses.is_empty()).then(|| self.losses.iter().sum::<f64>() / self.losses.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    /// Discount applied to the bootstrapped distance.
    pub gamma: f64,
    /// Step size of the tabular TD update (the parametric model uses its
    /// own optimizer).
    pub learning_rate: f64,
}

impl Default for TdConfig {
    fn default() -> Self {
        TdConfig {
            gamma: 1.0,
            learning_rate: 0.5,
        }
    }
}

/// A tabular or parametric distance regressor.
#[derive(Debug, Clone)]
pub enum DistanceModel {
    Tabular(TabularDistance),
    Parametric(MlpDistance),
}

impl DistanceModel {
    /// Runs `steps` regression steps of `batch_size` pairs each.
    pub fn fit(
        &mut self,
        pool: &TrajectoryPool,
        steps: usize,
        batch_size: usize,
        rng: &mut dyn RngCore,
    ) -> Result<FitStats> {
        if pool.is_empty() {
            return Err(DdlError::EmptyPool);
        }
        let mut stats = FitStats::default();
        for _ in 0..steps {
            let pairs = sample_pairs(pool, batch_size.max(1), rng)?;
            let loss = self.fit_pairs(&pairs);
            stats.losses.push(loss);
        }
        Ok(stats)
    }

    /// One regression step on an explicit batch; returns its loss before
    /// the update.
    pub fn fit_pairs(&mut self, pairs: &[PairSample]) -> f64 {
        match self {
            DistanceModel::Tabular(t) => {
                let total: f64 = pairs.iter().map(|p| t.regress(p.s_i, p.s_j, p.gap as f64)).sum();
                total / pairs.len().max(1) as f64
            }
            DistanceModel::Parametric(m) => {
                let batch: Vec<(State, State, f64)> =
                    pairs.iter().map(|p| (p.s_i, p.s_j, p.gap as f64)).collect();
                m.train_batch(&batch)
            }
        }
    }

    /// On-policy TD(0) toward `goal`: target is 0 at the goal and
    /// `1 + gamma * d(s', goal)` elsewhere, capped at the model's `d_max`.
    pub fn td_fit(
        &mut self,
        pool: &TrajectoryPool,
        goal: State,
        steps: usize,
        batch_size: usize,
        config: TdConfig,
        rng: &mut dyn RngCore,
    ) -> Result<FitStats> {
        let n = pool.transition_count();
        if n == 0 {
            return Err(DdlError::EmptyPool);
        }
        let d_max = self.d_max();
        if let DistanceModel::Tabular(t) = self {
            t.set(goal, goal, 0.0);
        }
        let mut stats = FitStats::default();
        for _ in 0..steps {
            let mut batch = Vec::with_capacity(batch_size.max(1));
            for _ in 0..batch_size.max(1) {
                let (s, _, next) = pool.transition_at(rng.gen_range(0..n)).expect("index in range");
                let target = if s == goal {
                    0.0
                } else {
                    let bootstrap = if next == goal { 0.0 } else { self.predict(next, goal) };
                    (1.0 + config.gamma * bootstrap).min(d_max)
                };
                batch.push((s, goal, target));
            }
            let loss = match self {
                DistanceModel::Tabular(t) => {
                    let total: f64 = batch
                        .iter()
                        .map(|&(s, g, y)| t.td_update(s, g, y, config.learning_rate))
                        .sum();
                    total / batch.len() as f64
                }
                DistanceModel::Parametric(m) => m.train_batch(&batch),
            };
            stats.losses.push(loss);
        }
        Ok(stats)
    }

    pub fn d_max(&self) -> f64 {
        match self {
            DistanceModel::Tabular(t) => t.d_max(),
            DistanceModel::Parametric(m) => m.d_max(),
        }
    }

    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        match self {
            DistanceModel::Tabular(t) => t.write_csv(w),
            DistanceModel::Parametric(m) => m.write_csv(w),
        }
    }

    /// Reads either checkpoint kind, dispatching on the header line.
    pub fn read_checkpoint<R: Read>(mut r: R, encoder: Option<StateEncoder>) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        if text.starts_with(tabular::HEADER_TAG) {
            Ok(DistanceModel::Tabular(TabularDistance::read_csv(text.as_bytes())?))
        } else if text.starts_with(mlp::HEADER_TAG) {
            let encoder = encoder.ok_or(DdlError::Parse(
                "parametric checkpoint needs a state encoder".into(),
            ))?;
            Ok(DistanceModel::Parametric(MlpDistance::read_csv(text.as_bytes(), encoder)?))
        } else {
            Err(DdlError::Parse("unrecognized distance checkpoint".into()))
        }
    }
}

impl DistanceEstimator for DistanceModel {
    fn predict(&self, s: State, t: State) -> f64 {
        match self {
            DistanceModel::Tabular(m) => m.predict(s, t),
            DistanceModel::Parametric(m) => m.predict(s, t),
        }
    }

    fn has_support(&self, s: State, t: State) -> bool {
        match self {
            DistanceModel::Tabular(m) => m.has_support(s, t),
            DistanceModel::Parametric(_) => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, RandomDeterministicMdp};
    use crate::trajectory::Trajectory;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain_traj(states: &[State]) -> Trajectory {
        let mut t = Trajectory::start(states[0]);
        for &s in &states[1..] {
            t.push(0, s, false);
        }
        t
    }

    fn pool_of(trajs: Vec<Trajectory>) -> TrajectoryPool {
        let mut pool = TrajectoryPool::new(10_000);
        for t in trajs {
            pool.push(t, 0);
        }
        pool
    }

    #[test]
    fn empty_pool_is_an_error() {
        let pool = TrajectoryPool::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_pairs(&pool, 3, &mut rng), Err(DdlError::EmptyPool)));
        let mut model = DistanceModel::Tabular(TabularDistance::new(4, 10.0));
        assert!(matches!(model.fit(&pool, 1, 4, &mut rng), Err(DdlError::EmptyPool)));
        assert!(matches!(
            model.td_fit(&pool, 0, 1, 4, TdConfig::default(), &mut rng),
            Err(DdlError::EmptyPool)
        ));
    }

    #[test]
    fn length_two_trajectory_gaps() {
        let pool = pool_of(vec![chain_traj(&[0, 1, 2])]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = sample_pairs(&pool, 2000, &mut rng).unwrap();
        let mut seen = [false; 3];
        for p in &pairs {
            assert!(p.gap <= 2);
            assert_eq!(p.s_j - p.s_i, p.gap);
            seen[p.gap] = true;
            if p.gap == 0 {
                assert_eq!(p.s_i, p.s_j);
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    /// Counting oracle: P(gap = 0) for a single length-T trajectory
    /// enumerated over every (i, j) with its sampling probability.
    fn zero_gap_probability(t: usize) -> f64 {
        let mut p = 0.0;
        for i in 0..=t {
            for j in i..=t {
                if j == i {
                    p += 1.0 / ((t + 1) as f64 * (t - i + 1) as f64);
                }
            }
        }
        p
    }

    #[test]
    fn zero_gap_frequency_matches_closed_form() {
        let t = 10;
        let expected = zero_gap_probability(t);
        // frozen from an exact rational enumeration: H_11 / 11
        assert!((expected - 0.27453430407975865).abs() < 1e-12);
        let states: Vec<State> = (0..=t).collect();
        let pool = pool_of(vec![chain_traj(&states)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 100_000;
        let zeros = sample_pairs(&pool, m, &mut rng)
            .unwrap()
            .iter()
            .filter(|p| p.gap == 0)
            .count();
        let freq = zeros as f64 / m as f64;
        let sigma = (expected * (1.0 - expected) / m as f64).sqrt();
        assert!((freq - expected).abs() < 3.0 * sigma, "{freq} vs {expected}");
    }

    #[test]
    fn tabular_fit_is_mean_of_gaps() {
        let mut model = DistanceModel::Tabular(TabularDistance::new(4, 10.0));
        let pairs = [
            PairSample { s_i: 0, s_j: 1, gap: 2 },
            PairSample { s_i: 0, s_j: 1, gap: 4 },
        ];
        model.fit_pairs(&pairs);
        assert_eq!(model.predict(0, 1), 3.0);
        assert_eq!(model.predict(1, 0), 10.0);
    }

    #[test]
    fn chain_distance_converges_under_always_right() {
        // 0 -> 1 -> 2 -> 3: a deterministic policy gives a constant gap,
        // so every sampled (0, 3) pair carries exactly 3.
        let env = RandomDeterministicMdp::chain(4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pool = TrajectoryPool::new(1000);
        for _ in 0..5 {
            let mut s = env.reset(&mut rng);
            let mut t = Trajectory::start(s);
            for _ in 0..3 {
                s = env.step(s, 0, &mut rng).unwrap().next_state;
                t.push(0, s, false);
            }
            pool.push(t, 0);
        }
        let mut model = DistanceModel::Tabular(TabularDistance::new(4, 3.0));
        model.fit(&pool, 200, 32, &mut rng).unwrap();
        assert!((model.predict(0, 3) - 3.0).abs() < 0.01);
        assert!(model.predict(2, 2) <= 0.1);
    }

    #[test]
    fn finite_horizon_biases_toward_zero() {
        // Lazy chain: a uniform-random choice between "advance" and "stay"
        // makes the time from 0 to 5 a sum of five geometric(1/2) waits,
        // expectation 10. Episodes of T = 12 transitions cannot observe the
        // long tail, so the regressed value lands strictly below 10.
        let n = 8;
        let table = (0..n).map(|s| vec![(s + 1).min(n - 1), s]).collect();
        let env = RandomDeterministicMdp::from_table(table, 0, None, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pool = TrajectoryPool::new(1_000_000);
        for _ in 0..4000 {
            let mut s = env.reset(&mut rng);
            let mut t = Trajectory::start(s);
            for _ in 0..12 {
                let a = rng.gen_range(0..2);
                s = env.step(s, a, &mut rng).unwrap().next_state;
                t.push(a, s, false);
            }
            pool.push(t, 0);
        }
        let mut model = DistanceModel::Tabular(TabularDistance::new(n, 12.0));
        model.fit(&pool, 2000, 256, &mut rng).unwrap();
        let fitted = model.predict(0, 5);
        assert!(model.has_support(0, 5));
        assert!(fitted < 10.0, "fitted {fitted}");
        assert!(fitted > 5.0, "fitted {fitted}");
    }

    #[test]
    fn td_one_step_and_chain() {
        // chain 0 -> 1 -> 2 -> 3(goal)
        let pool = pool_of(vec![chain_traj(&[0, 1, 2, 3])]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = DistanceModel::Tabular(TabularDistance::new(5, 20.0));
        model
            .td_fit(&pool, 3, 400, 8, TdConfig { gamma: 1.0, learning_rate: 0.5 }, &mut rng)
            .unwrap();
        assert!((model.predict(2, 3) - 1.0).abs() < 0.05);
        assert!((model.predict(0, 3) - 3.0).abs() < 0.1);
    }

    #[test]
    fn td_leaves_unreaching_states_at_d_max() {
        // 4 -> 4 self loop never reaches the goal 3
        let pool = pool_of(vec![chain_traj(&[0, 1, 2, 3]), chain_traj(&[4, 4, 4])]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut model = DistanceModel::Tabular(TabularDistance::new(5, 20.0));
        model
            .td_fit(&pool, 3, 200, 8, TdConfig::default(), &mut rng)
            .unwrap();
        assert_eq!(model.predict(4, 3), 20.0);
    }
}
