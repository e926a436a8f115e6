//! Domain types and the closed-form per-request formulas.
//!
//! Time is measured in hours throughout. Frequencies are in Hz, energy in
//! Joules and data sizes in MB (converted to bits with `mb_to_bits`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Physical and workload constants of one server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>", serialize = "T: Serialize"))]
pub struct SimParams<T = f64> {
    /// CPU cycles needed per bit of request data.
    pub nu: T,
    /// Effective switched capacitance of a core.
    pub kappa: T,
    pub num_cores: usize,
    /// Battery capacity in Joules.
    pub battery_capacity: T,
    /// Solar panel area in m².
    pub panel_size: T,
    /// Selectable core frequencies in Hz, strictly increasing.
    pub freq_options: Vec<T>,
    /// Weight of the processing-time penalty in the reward.
    pub eta: T,
    /// `[min, max]` request size in MB.
    pub data_size_range: [T; 2],
    /// Requests per hour.
    pub arrival_rate: T,
    pub mb_to_bits: T,
}

impl<T: Scalar> Default for SimParams<T> {
    fn default() -> Self {
        Self {
            nu: T::lit(2e4),
            kappa: T::lit(1e-28),
            num_cores: 12,
            battery_capacity: T::lit(1e6),
            panel_size: T::lit(0.5),
            freq_options: vec![T::lit(2e9), T::lit(3e9), T::lit(4e9)],
            eta: T::zero(),
            data_size_range: [T::lit(10.0), T::lit(30.0)],
            arrival_rate: T::lit(30.0),
            mb_to_bits: T::lit(8e6),
        }
    }
}

impl<T: Scalar> SimParams<T> {
    /// Checks the parameter invariants.
    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        if !(self.nu > zero) {
            return Err(Error::param("nu must be positive"));
        }
        if !(self.kappa > zero) {
            return Err(Error::param("kappa must be positive"));
        }
        if self.num_cores == 0 {
            return Err(Error::param("num_cores must be at least 1"));
        }
        if !(self.battery_capacity > zero) {
            return Err(Error::param("battery_capacity must be positive"));
        }
        if !(self.panel_size >= zero) {
            return Err(Error::param("panel_size must be non-negative"));
        }
        if self.freq_options.is_empty() {
            return Err(Error::param("freq_options must not be empty"));
        }
        if self.freq_options.len() + 1 > ActionMask::MAX_ACTIONS {
            return Err(Error::param(format!(
                "at most {} frequency options are supported",
                ActionMask::MAX_ACTIONS - 1
            )));
        }
        if !(self.freq_options[0] > zero) {
            return Err(Error::param("frequencies must be positive"));
        }
        if self.freq_options.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param("freq_options must be strictly increasing"));
        }
        let [lo, hi] = self.data_size_range;
        if !(lo > zero && lo <= hi) {
            return Err(Error::param("data_size_range must satisfy 0 < min <= max"));
        }
        if !(self.mb_to_bits > zero) {
            return Err(Error::param("mb_to_bits must be positive"));
        }
        if !(self.eta >= zero) || !self.eta.is_finite() {
            return Err(Error::param("eta must be finite and non-negative"));
        }
        Ok(())
    }

    /// Number of frequency options `n`.
    pub fn num_frequencies(&self) -> usize {
        self.freq_options.len()
    }

    /// Size of the action space, `n + 1` (rejection included).
    pub fn num_actions(&self) -> usize {
        self.freq_options.len() + 1
    }

    /// Frequency for a non-rejecting action.
    pub fn frequency(&self, action: Action) -> Result<T> {
        match action.code() {
            0 => Err(Error::param("rejection has no frequency")),
            k if k <= self.num_frequencies() => Ok(self.freq_options[k - 1]),
            k => Err(Error::param(format!("action code {k} exceeds {} frequency options", self.num_frequencies()))),
        }
    }

    fn check_action(&self, action: Action) -> Result<()> {
        if action.code() > self.num_frequencies() {
            return Err(Error::param(format!(
                "action code {} exceeds {} frequency options",
                action.code(),
                self.num_frequencies()
            )));
        }
        Ok(())
    }

    fn bits(&self, data_size_mb: T) -> T {
        data_size_mb * self.mb_to_bits
    }
}

/// One offloading request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub index: u64,
    /// Hours since the start of the episode.
    pub arrival_time: f64,
    pub data_size_mb: f64,
}

/// Treatment of one request: `0` rejects, `k > 0` runs at `freq_options[k - 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(usize);

impl Action {
    pub const REJECT: Action = Action(0);

    pub const fn new(code: usize) -> Self {
        Action(code)
    }

    pub const fn code(self) -> usize {
        self.0
    }

    pub const fn is_reject(self) -> bool {
        self.0 == 0
    }

    /// Index into `cores_per_freq` / `freq_options` for an accepting action.
    pub fn freq_index(self) -> Option<usize> {
        self.0.checked_sub(1)
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Subset of the action space, stored as a bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionMask {
    bits: u64,
    len: usize,
}

impl ActionMask {
    pub const MAX_ACTIONS: usize = 64;

    /// Mask over `len` actions containing only the rejection.
    pub fn reject_only(len: usize) -> Self {
        assert!((1..=Self::MAX_ACTIONS).contains(&len));
        Self { bits: 1, len }
    }

    pub fn all(len: usize) -> Self {
        assert!((1..=Self::MAX_ACTIONS).contains(&len));
        let bits = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        Self { bits, len }
    }

    pub fn from_bools(flags: &[bool]) -> Self {
        let mut mask = Self { bits: 0, len: flags.len() };
        assert!(mask.len >= 1 && mask.len <= Self::MAX_ACTIONS);
        for (i, &f) in flags.iter().enumerate() {
            if f {
                mask.bits |= 1 << i;
            }
        }
        mask
    }

    pub fn insert(&mut self, action: Action) {
        assert!(action.code() < self.len);
        self.bits |= 1 << action.code();
    }

    pub fn remove(&mut self, action: Action) {
        if action.code() < self.len {
            self.bits &= !(1 << action.code());
        }
    }

    pub fn contains(&self, action: Action) -> bool {
        action.code() < self.len && self.bits & (1 << action.code()) != 0
    }

    /// Number of actions in the underlying action space.
    pub fn space_len(&self) -> usize {
        self.len
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = Action> + '_ {
        (0..self.len).filter(move |&i| self.bits & (1 << i) != 0).map(Action)
    }

    /// Lowest accepting action, if any.
    pub fn min_accepting(&self) -> Option<Action> {
        self.iter().find(|a| !a.is_reject())
    }

    /// Highest accepting action, if any.
    pub fn max_accepting(&self) -> Option<Action> {
        self.iter().filter(|a| !a.is_reject()).last()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.bits & (1 << i) != 0).collect()
    }
}

/// A request occupying one core until `finish_time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveJob<T = f64> {
    pub finish_time: f64,
    pub frequency: T,
    pub freq_index: usize,
    /// Part of the reservation this job has not consumed yet.
    pub remaining_energy: T,
}

/// Server status observed when a request arrives.
///
/// `local_time`, `battery`, `reserved`, `cores_per_freq` and `data_size_mb`
/// form the decision state; `active_jobs` is simulator bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState<T = f64> {
    /// Hour of day in `[0, 24)`.
    pub local_time: f64,
    pub battery: T,
    pub reserved: T,
    pub cores_per_freq: Vec<usize>,
    pub data_size_mb: T,
    pub active_jobs: Vec<ActiveJob<T>>,
}

impl<T: Scalar> ServerState<T> {
    pub fn new(params: &SimParams<T>, battery: T) -> Self {
        Self {
            local_time: 0.0,
            battery,
            reserved: T::zero(),
            cores_per_freq: vec![0; params.num_frequencies()],
            data_size_mb: params.data_size_range[0],
            active_jobs: Vec::new(),
        }
    }

    /// Number of busy cores (Ψ).
    pub fn busy_cores(&self) -> usize {
        self.cores_per_freq.iter().sum()
    }

    /// Battery energy not yet reserved by running jobs.
    pub fn free_energy(&self) -> T {
        self.battery - self.reserved
    }

    /// Verifies `0 <= S <= B <= B_max` (with absolute slack `tol` Joules) and
    /// the core bookkeeping.
    pub fn check_invariants(&self, params: &SimParams<T>, tol: T) -> Result<()> {
        let zero = T::zero();
        if self.reserved < zero - tol {
            return Err(Error::contract(format!("reserved energy {} < 0", self.reserved)));
        }
        if self.reserved > self.battery + tol {
            return Err(Error::contract(format!("reserved energy {} exceeds battery {}", self.reserved, self.battery)));
        }
        if self.battery > params.battery_capacity + tol {
            return Err(Error::contract(format!(
                "battery {} exceeds capacity {}",
                self.battery, params.battery_capacity
            )));
        }
        if self.cores_per_freq.len() != params.num_frequencies() {
            return Err(Error::contract("cores_per_freq length differs from frequency count"));
        }
        let busy = self.busy_cores();
        if busy > params.num_cores {
            return Err(Error::contract(format!("{busy} busy cores exceed {} available", params.num_cores)));
        }
        if busy != self.active_jobs.len() {
            return Err(Error::contract(format!("{busy} busy cores but {} active jobs", self.active_jobs.len())));
        }
        Ok(())
    }

    /// The decision-relevant part of the state.
    pub fn snapshot(&self) -> Snapshot<T> {
        Snapshot {
            local_time: self.local_time,
            battery: self.battery,
            reserved: self.reserved,
            cores_per_freq: self.cores_per_freq.clone(),
            data_size_mb: self.data_size_mb,
        }
    }
}

/// State tuple without the simulator's per-job bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot<T = f64> {
    pub local_time: f64,
    pub battery: T,
    pub reserved: T,
    pub cores_per_freq: Vec<usize>,
    pub data_size_mb: T,
}

/// Processing time in hours: `nu * d / f`, zero on rejection.
pub fn processing_time<T: Scalar>(params: &SimParams<T>, action: Action, data_size_mb: T) -> Result<T> {
    params.check_action(action)?;
    if action.is_reject() {
        return Ok(T::zero());
    }
    let f = params.frequency(action)?;
    let seconds = params.nu * params.bits(data_size_mb) / f;
    Ok(seconds / T::lit(SECONDS_PER_HOUR))
}

/// Energy in Joules: `kappa * f^2 * nu * d`, zero on rejection.
pub fn energy_consumption<T: Scalar>(params: &SimParams<T>, action: Action, data_size_mb: T) -> Result<T> {
    params.check_action(action)?;
    if action.is_reject() {
        return Ok(T::zero());
    }
    let f = params.frequency(action)?;
    Ok(params.kappa * f * f * (params.nu * params.bits(data_size_mb)))
}

/// Power drawn by one core running at `frequency`, `kappa * f^3` Watts.
pub fn core_power<T: Scalar>(params: &SimParams<T>, frequency: T) -> T {
    params.kappa * frequency * frequency * frequency
}

/// Immediate reward `1{a != 0} - eta * tau_a`, with `tau_a` in hours.
pub fn reward<T: Scalar>(params: &SimParams<T>, action: Action, data_size_mb: T) -> Result<T> {
    let tau = processing_time(params, action, data_size_mb)?;
    let accepted = if action.is_reject() { T::zero() } else { T::one() };
    Ok(accepted - params.eta * tau)
}

/// Actions satisfying the core constraint and the energy constraint for the
/// request described by `state.data_size_mb`. Rejection is always included.
pub fn feasible_actions<T: Scalar>(params: &SimParams<T>, state: &ServerState<T>) -> ActionMask {
    let mut mask = ActionMask::reject_only(params.num_actions());
    if state.busy_cores() + 1 > params.num_cores {
        return mask;
    }
    for k in 1..=params.num_frequencies() {
        let a = Action::new(k);
        let e = energy_consumption(params, a, state.data_size_mb).expect("valid action code");
        if state.reserved + e <= state.battery {
            mask.insert(a);
        }
    }
    mask
}
