use std::collections::HashMap;

use rand::RngCore;

use super::{simulate, ExactDistanceTable, StationaryPolicy};
use crate::env::{finite_state_count, Env, State};
use crate::error::Result;

/// Policy-conditioned distance with the weighting of the regression
/// sampler: each episode counts equally, and within an episode of length
/// `L` the pair `(i, j)` has weight `1 / ((L + 1)(L - i + 1))`. The table
/// entry is the weighted mean of `j - i` over all co-visits of `(s, s')`,
/// which is exactly what the tabular regressor converges to.
///
/// Deterministic env and policy: exact, one episode per initial state.
/// Otherwise: `mc_samples` episodes, with ratio-estimator standard errors.
/// Pairs never co-visited are UNREACHED.
pub fn exact_policy_distance(
    env: &dyn Env,
    policy: &StationaryPolicy,
    horizon: usize,
    mc_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<ExactDistanceTable> {
    let n = finite_state_count(env)?;
    let exact = env.is_deterministic() && policy.is_deterministic();
    let mut acc = Accumulator::new(n);
    if exact {
        for (s0, w) in env.initial_distribution() {
            let (states, _) = simulate(env, policy, s0, None, horizon, rng)?;
            acc.add_episode(&states, w);
        }
    } else {
        for _ in 0..mc_samples {
            let s0 = env.reset(rng);
            let (states, _) = simulate(env, policy, s0, None, horizon, rng)?;
            acc.add_episode(&states, 1.0);
        }
    }
    Ok(acc.finish(if exact { None } else { Some(mc_samples) }))
}

struct Accumulator {
    n: usize,
    sx: Vec<f64>,
    sy: Vec<f64>,
    sxx: Vec<f64>,
    syy: Vec<f64>,
    sxy: Vec<f64>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        let z = vec![0.0; n * n];
        Accumulator {
            n,
            sx: z.clone(),
            sy: z.clone(),
            sxx: z.clone(),
            syy: z.clone(),
            sxy: z,
        }
    }

    fn add_episode(&mut self, states: &[State], weight: f64) {
        let len = states.len() - 1;
        let mut cells: HashMap<usize, (f64, f64)> = HashMap::new();
        for i in 0..=len {
            let w = weight / ((len + 1) as f64 * (len - i + 1) as f64);
            for j in i..=len {
                let e = cells.entry(states[i] * self.n + states[j]).or_default();
                e.0 += w * (j - i) as f64;
                e.1 += w;
            }
        }
        for (c, (x, y)) in cells {
            self.sx[c] += x;
            self.sy[c] += y;
            self.sxx[c] += x * x;
            self.syy[c] += y * y;
            self.sxy[c] += x * y;
        }
    }

    fn finish(self, samples: Option<usize>) -> ExactDistanceTable {
        let mut table = ExactDistanceTable::unreached(self.n);
        let mut errs = vec![0.0; self.n * self.n];
        for c in 0..self.n * self.n {
            if self.sy[c] <= 0.0 {
                continue;
            }
            let r = self.sx[c] / self.sy[c];
            table.values[c] = Some(r);
            if let Some(m) = samples.filter(|&m| m > 1) {
                let m = m as f64;
                let resid = (self.sxx[c] - 2.0 * r * self.sxy[c] + r * r * self.syy[c]).max(0.0);
                let mean_y = self.sy[c] / m;
                errs[c] = (resid / (m * (m - 1.0))).sqrt() / mean_y;
            }
        }
        if samples.is_some() {
            table.std_err = Some(errs);
        }
        table
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridMaze, PathologicalMdp, PathologicalState, RandomDeterministicMdp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_cycle() {
        // one lap from every start, so each ordered pair is co-visited once
        let mdp = RandomDeterministicMdp::cycle(5, 5).unwrap().with_uniform_start();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = exact_policy_distance(&mdp, &StationaryPolicy::deterministic(&[0; 5], 1), 5, 0, &mut rng).unwrap();
        for s in 0..5 {
            assert_eq!(d.get(s, (s + 2) % 5), Some(2.0));
        }
        assert!(d.std_err(0, 2).is_none());
    }

    #[test]
    fn risky_policy_distance_is_two() {
        let env = PathologicalMdp::new(0.3, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = StationaryPolicy::deterministic(&[0; 6], 2);
        let d = exact_policy_distance(&env, &policy, 10, 20_000, &mut rng).unwrap();
        let g = PathologicalState::Goal as usize;
        let v = d.get(0, g).unwrap();
        assert!((v - 2.0).abs() <= 4.0 * d.std_err(0, g).unwrap() + 1e-12, "{v}");
    }

    /// Weighted conditional gap by enumerating every action sequence of
    /// length `horizon` under the uniform policy.
    fn enumerate_two_cell(horizon: usize) -> f64 {
        let maze = GridMaze::corridor(2, horizon).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        let total = 5usize.pow(horizon as u32);
        for code in 0..total {
            let mut c = code;
            let mut states = vec![0usize];
            for _ in 0..horizon {
                let a = c % 5;
                c /= 5;
                let s = *states.last().unwrap();
                states.push(maze.afterstate(s, a).unwrap());
            }
            let len = horizon;
            for i in 0..=len {
                for j in i..=len {
                    if states[i] == 0 && states[j] == 1 {
                        let w = 1.0 / ((len + 1) * (len - i + 1)) as f64 / total as f64;
                        num += w * (j - i) as f64;
                        den += w;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn uniform_two_cell_matches_enumeration() {
        let horizon = 5;
        let truth = enumerate_two_cell(horizon);
        let maze = GridMaze::corridor(2, horizon).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = exact_policy_distance(&maze, &StationaryPolicy::uniform(2, 5), horizon, 40_000, &mut rng).unwrap();
        let (v, se) = (d.get(0, 1).unwrap(), d.std_err(0, 1).unwrap());
        assert!((v - truth).abs() <= 4.0 * se, "{v} vs {truth} (se {se})");
    }

    #[test]
    fn never_co_visited_is_unreached() {
        let maze = GridMaze::corridor(4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // always left from the left end: never leaves cell 0
        let d = exact_policy_distance(&maze, &StationaryPolicy::deterministic(&[2; 4], 5), 3, 0, &mut rng).unwrap();
        assert_eq!(d.get(0, 3), None);
        assert_eq!(d.get(0, 1), None);
    }
}
