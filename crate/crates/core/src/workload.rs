//! Request arrival process.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Request;
use crate::seed;

/// Smallest inter-arrival gap the sampler may return, in hours.
pub const MIN_GAP_HOURS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Requests per hour.
    pub arrival_rate: f64,
    /// `[min, max]` data size in MB.
    pub data_size_range: [f64; 2],
    pub seed: u64,
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return Err(Error::param("arrival_rate must be positive"));
        }
        let [lo, hi] = self.data_size_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::param("data_size_range must satisfy 0 < min <= max"));
        }
        Ok(())
    }
}

/// Source of requests for one environment.
pub trait RequestSource: Send {
    /// Next request in arrival order, or `None` when the source is exhausted.
    fn next_request(&mut self) -> Option<Request>;

    /// Restarts the stream from time zero with a new seed.
    fn restart(&mut self, seed: u64);
}

/// Poisson arrivals with uniformly distributed data sizes.
#[derive(Debug, Clone)]
pub struct PoissonWorkload {
    cfg: WorkloadConfig,
    rng: ChaCha8Rng,
    gap: Exp<f64>,
    clock: f64,
    index: u64,
}

impl PoissonWorkload {
    pub fn new(cfg: WorkloadConfig) -> Result<Self> {
        cfg.validate()?;
        let gap = Exp::new(cfg.arrival_rate).map_err(|e| Error::param(e.to_string()))?;
        Ok(Self { rng: seed::rng(cfg.seed), cfg, gap, clock: 0.0, index: 0 })
    }

    pub fn config(&self) -> &WorkloadConfig {
        &self.cfg
    }

    /// Draws the request following one that arrived at `current_time`.
    pub fn next_after(&mut self, current_time: f64) -> Request {
        let gap = self.gap.sample(&mut self.rng).max(MIN_GAP_HOURS);
        let [lo, hi] = self.cfg.data_size_range;
        let size = if hi > lo { self.rng.random_range(lo..hi) } else { lo };
        let req = Request { index: self.index, arrival_time: current_time + gap, data_size_mb: size };
        self.index += 1;
        self.clock = req.arrival_time;
        req
    }
}

impl RequestSource for PoissonWorkload {
    fn next_request(&mut self) -> Option<Request> {
        let now = self.clock;
        Some(self.next_after(now))
    }

    fn restart(&mut self, seed: u64) {
        self.cfg.seed = seed;
        self.rng = seed::rng(seed);
        self.clock = 0.0;
        self.index = 0;
    }
}

/// A fixed list of requests, replayed identically after every restart.
#[derive(Debug, Clone, Default)]
pub struct ScriptedWorkload {
    requests: Vec<Request>,
    cursor: usize,
}

impl ScriptedWorkload {
    pub fn new(requests: Vec<Request>) -> Result<Self> {
        if requests.windows(2).any(|w| w[1].arrival_time < w[0].arrival_time) {
            return Err(Error::param("scripted requests must be in arrival order"));
        }
        Ok(Self { requests, cursor: 0 })
    }
}

impl RequestSource for ScriptedWorkload {
    fn next_request(&mut self) -> Option<Request> {
        let r = self.requests.get(self.cursor).copied();
        self.cursor += 1;
        r
    }

    fn restart(&mut self, _seed: u64) {
        self.cursor = 0;
    }
}

/// Wraps a source with a look-ahead buffer.
pub(crate) struct Buffered {
    inner: Box<dyn RequestSource>,
    ahead: VecDeque<Request>,
}

impl Buffered {
    pub(crate) fn new(inner: Box<dyn RequestSource>) -> Self {
        Self { inner, ahead: VecDeque::new() }
    }

    pub(crate) fn pop(&mut self) -> Option<Request> {
        self.ahead.pop_front().or_else(|| self.inner.next_request())
    }

    pub(crate) fn peek(&mut self, n: usize) -> Vec<Request> {
        while self.ahead.len() < n {
            match self.inner.next_request() {
                Some(r) => self.ahead.push_back(r),
                None => break,
            }
        }
        self.ahead.iter().take(n).copied().collect()
    }

    pub(crate) fn restart(&mut self, seed: u64) {
        self.ahead.clear();
        self.inner.restart(seed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> WorkloadConfig {
        WorkloadConfig { arrival_rate: 30.0, data_size_range: [10.0, 30.0], seed }
    }

    #[test]
    fn empirical_means_match_rate_and_size() {
        let mut w = PoissonWorkload::new(cfg(5)).unwrap();
        let n = 100_000;
        let mut last = 0.0;
        let mut size_sum = 0.0;
        for _ in 0..n {
            let r = w.next_request().unwrap();
            assert!(r.arrival_time > last);
            assert!((10.0..=30.0).contains(&r.data_size_mb));
            last = r.arrival_time;
            size_sum += r.data_size_mb;
        }
        let mean_gap = last / n as f64;
        assert!((mean_gap - 1.0 / 30.0).abs() / (1.0 / 30.0) < 0.02, "gap {mean_gap}");
        let mean_size = size_sum / n as f64;
        assert!((mean_size - 20.0).abs() / 20.0 < 0.02, "size {mean_size}");
    }

    #[test]
    fn restart_replays_identically() {
        let mut w = PoissonWorkload::new(cfg(9)).unwrap();
        let first: Vec<_> = (0..50).map(|_| w.next_request().unwrap()).collect();
        w.restart(9);
        let second: Vec<_> = (0..50).map(|_| w.next_request().unwrap()).collect();
        assert_eq!(first, second);
        w.restart(10);
        assert_ne!(first[0], w.next_request().unwrap());
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(PoissonWorkload::new(WorkloadConfig { arrival_rate: 0.0, ..cfg(1) }).is_err());
        assert!(PoissonWorkload::new(WorkloadConfig { data_size_range: [5.0, 1.0], ..cfg(1) }).is_err());
    }

    #[test]
    fn buffered_peek_does_not_consume() {
        let mut b = Buffered::new(Box::new(PoissonWorkload::new(cfg(2)).unwrap()));
        let ahead = b.peek(3);
        assert_eq!(ahead.len(), 3);
        assert_eq!(b.pop(), Some(ahead[0]));
        assert_eq!(b.peek(1)[0], ahead[1]);
    }
}
