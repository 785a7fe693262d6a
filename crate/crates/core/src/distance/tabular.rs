use std::io::{Read, Write};

use super::DistanceEstimator;
use crate::env::State;
use crate::error::{DdlError, Result};

pub(super) const HEADER_TAG: &str = "# tabular-distance v1";

/// Dense `(s, s')` table of running means.
///
/// Without a count cap each cell is the exact arithmetic mean of every gap
/// regressed into it. With `count_cap = Some(k)` the running mean switches
/// to a constant step `1/k` once `k` samples have been seen, which turns it
/// into an exponential moving average over recent data.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDistance {
    n: usize,
    d_max: f64,
    count_cap: Option<u64>,
    means: Vec<f64>,
    counts: Vec<u64>,
}

impl TabularDistance {
    pub fn new(state_count: usize, d_max: f64) -> Self {
        TabularDistance {
            n: state_count,
            d_max,
            count_cap: None,
            means: vec![0.0; state_count * state_count],
            counts: vec![0; state_count * state_count],
        }
    }

    pub fn with_count_cap(mut self, cap: Option<u64>) -> Self {
        self.count_cap = cap.filter(|&c| c > 0);
        self
    }

    pub fn state_count(&self) -> usize {
        self.n
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn count(&self, s: State, t: State) -> u64 {
        self.counts[self.idx(s, t)]
    }

    fn idx(&self, s: State, t: State) -> usize {
        debug_assert!(s < self.n && t < self.n, "state out of range");
        s * self.n + t
    }

    /// Folds one observed gap into the cell; returns the squared-error loss
    /// `0.5 * (d - gap)^2` of the prediction before the update.
    pub fn regress(&mut self, s: State, t: State, gap: f64) -> f64 {
        let i = self.idx(s, t);
        let before = if self.counts[i] == 0 { self.d_max } else { self.means[i] };
        let loss = 0.5 * (before - gap).powi(2);
        self.counts[i] += 1;
        let k = match self.count_cap {
            Some(cap) => self.counts[i].min(cap),
            None => self.counts[i],
        };
        if self.counts[i] == 1 {
            self.means[i] = gap;
        } else {
            self.means[i] += (gap - self.means[i]) / k as f64;
        }
        loss
    }

    /// Moves the cell toward `target` by `rate`; an untouched cell starts
    /// from `d_max`. Returns the loss before the update.
    pub fn td_update(&mut self, s: State, t: State, target: f64, rate: f64) -> f64 {
        let i = self.idx(s, t);
        let before = if self.counts[i] == 0 { self.d_max } else { self.means[i] };
        self.means[i] = before + rate * (target - before);
        self.counts[i] += 1;
        0.5 * (before - target).powi(2)
    }

    /// Overwrites a cell, marking it as observed once.
    pub fn set(&mut self, s: State, t: State, value: f64) {
        let i = self.idx(s, t);
        self.means[i] = value;
        self.counts[i] = self.counts[i].max(1);
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{HEADER_TAG} states={} d_max={} count_cap={}",
            self.n,
            self.d_max,
            self.count_cap.unwrap_or(0)
        )?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["s", "s_prime", "mean", "count"])?;
        for s in 0..self.n {
            for t in 0..self.n {
                let i = self.idx(s, t);
                if self.counts[i] > 0 {
                    csv.write_record([
                        s.to_string(),
                        t.to_string(),
                        self.means[i].to_string(),
                        self.counts[i].to_string(),
                    ])?;
                }
            }
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let (header, body) = text
            .split_once('\n')
            .ok_or_else(|| DdlError::Parse("missing checkpoint header".into()))?;
        let rest = header
            .strip_prefix(HEADER_TAG)
            .ok_or_else(|| DdlError::Parse("not a tabular distance checkpoint".into()))?;
        let mut n = None;
        let mut d_max = None;
        let mut cap = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("states", v)) => n = v.parse().ok(),
                Some(("d_max", v)) => d_max = v.parse().ok(),
                Some(("count_cap", v)) => cap = v.parse::<u64>().ok(),
                _ => return Err(DdlError::Parse(format!("bad header field {field:?}"))),
            }
        }
        let (n, d_max) = n
            .zip(d_max)
            .ok_or_else(|| DdlError::Parse("header needs states and d_max".into()))?;
        let mut table = TabularDistance::new(n, d_max).with_count_cap(cap);
        let mut csv = csv::Reader::from_reader(body.as_bytes());
        for row in csv.records() {
            let row = row?;
            let parse = |k: usize| -> Result<&str> {
                row.get(k).ok_or_else(|| DdlError::Parse("short checkpoint row".into()))
            };
            let s: usize = parse(0)?.parse().map_err(|_| DdlError::Parse("bad state".into()))?;
            let t: usize = parse(1)?.parse().map_err(|_| DdlError::Parse("bad state".into()))?;
            if s >= n || t >= n {
                return Err(DdlError::InvalidState(s.max(t)));
            }
            let mean: f64 = parse(2)?.parse().map_err(|_| DdlError::Parse("bad mean".into()))?;
            let count: u64 = parse(3)?.parse().map_err(|_| DdlError::Parse("bad count".into()))?;
            let i = table.idx(s, t);
            table.means[i] = mean;
            table.counts[i] = count;
        }
        Ok(table)
    }
}

impl DistanceEstimator for TabularDistance {
    fn predict(&self, s: State, t: State) -> f64 {
        let i = self.idx(s, t);
        if self.counts[i] == 0 {
            self.d_max
        } else {
            self.means[i].max(0.0)
        }
    }

    fn has_support(&self, s: State, t: State) -> bool {
        self.counts[self.idx(s, t)] > 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unvisited_cell_is_d_max() {
        let t = TabularDistance::new(3, 25.0);
        assert_eq!(t.predict(0, 2), 25.0);
        assert!(!t.has_support(0, 2));
    }

    #[test]
    fn count_cap_tracks_recent_values() {
        let mut t = TabularDistance::new(2, 10.0).with_count_cap(Some(4));
        for _ in 0..100 {
            t.regress(0, 1, 8.0);
        }
        for _ in 0..100 {
            t.regress(0, 1, 2.0);
        }
        assert!((t.predict(0, 1) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn csv_round_trip() {
        let mut t = TabularDistance::new(3, 7.5).with_count_cap(Some(50));
        t.regress(0, 1, 2.0);
        t.regress(0, 1, 3.0);
        t.regress(2, 2, 0.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = TabularDistance::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap() == "s,s_prime,mean,count");
    }

    #[test]
    fn rejects_foreign_checkpoint() {
        assert!(TabularDistance::read_csv("hello\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn uncapped_fit_equals_arithmetic_mean(gaps in prop::collection::vec(0u32..200, 1..60)) {
            let mut t = TabularDistance::new(2, 99.0);
            for g in &gaps {
                t.regress(0, 1, *g as f64);
            }
            let mean = gaps.iter().map(|&g| g as f64).sum::<f64>() / gaps.len() as f64;
            prop_assert!((t.predict(0, 1) - mean).abs() < 1e-9);
        }

        #[test]
        fn predictions_nonnegative(values in prop::collection::vec(-50.0f64..50.0, 1..20)) {
            let mut t = TabularDistance::new(2, 5.0);
            for v in values {
                t.td_update(1, 0, v, 0.7);
                prop_assert!(t.predict(1, 0) >= 0.0);
            }
        }
    }
}
