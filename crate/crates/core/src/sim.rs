//! Event-driven simulation of the server between request arrivals.
//!
//! Between two decision epochs the environment integrates harvest and core
//! drain segment by segment, where segments end at job completions. Each
//! running job drains the battery and the reservation at `kappa * f^3`
//! until its own reservation is spent, which coincides with its finish time.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyTrace, TraceWindow};
use crate::error::{Error, Result};
use crate::model::{self, Action, ActionMask, ActiveJob, Request, ServerState, SimParams, Snapshot, SECONDS_PER_HOUR};
use crate::policy::{Decision, Lookahead, Scheduler};
use crate::seed;
use crate::workload::{Buffered, RequestSource};

pub const HOURS_PER_DAY: f64 = 24.0;

/// Environment settings that are not physical constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Battery level at reset, as a fraction of capacity.
    pub initial_battery_fraction: f64,
    /// Absolute slack in Joules for the queue invariants (floating-point noise).
    pub invariant_tolerance: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { initial_battery_fraction: 0.5, invariant_tolerance: 1e-6 }
    }
}

/// Why a request was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionMotivation {
    /// The request was accepted.
    None,
    /// No accepting action satisfies the energy constraint.
    FullReserved,
    /// All cores are busy while energy would have allowed acceptance.
    FullLoaded,
    /// The scheduler rejected although acceptance was feasible.
    Conservation,
}

/// One decision epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub request: Request,
    /// State observed at the arrival, before the action.
    pub prev_state: Snapshot,
    pub action: Action,
    pub reward: f64,
    /// Processing time in hours (0 on rejection).
    pub processing_time: f64,
    /// Reserved energy in Joules (0 on rejection).
    pub energy: f64,
    /// Post-action state.
    pub next_state: Snapshot,
    pub rejection_motivation: RejectionMotivation,
}

/// Per-episode energy bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub start_battery: f64,
    pub harvested: f64,
    pub consumed: f64,
    pub cap_loss: f64,
}

impl EnergyLedger {
    /// `B_end - B_start - (harvested - consumed - cap_loss)`; zero up to rounding.
    pub fn residual(&self, end_battery: f64) -> f64 {
        end_battery - self.start_battery - (self.harvested - self.consumed - self.cap_loss)
    }

    /// Scale against which [`Self::residual`] is judged.
    pub fn magnitude(&self, capacity: f64) -> f64 {
        self.harvested.max(self.consumed).max(capacity)
    }
}

/// Advances `state` from `from` to `to`, processing completions in time order.
///
/// Returns the number of event boundaries at which the invariants were
/// checked. Shared by [`Environment`] and the look-ahead planner.
pub fn advance_state(
    params: &SimParams,
    state: &mut ServerState,
    energy: &TraceWindow,
    from: f64,
    to: f64,
    ledger: &mut EnergyLedger,
    tolerance: f64,
) -> Result<u64> {
    if to < from {
        return Err(Error::param(format!("cannot advance backwards from {from} to {to}")));
    }
    let mut now = from;
    let mut checks = 0;
    loop {
        let next_completion =
            state.active_jobs.iter().map(|j| j.finish_time).filter(|&f| f <= to).min_by(f64::total_cmp);
        let seg_end = next_completion.unwrap_or(to).max(now);
        integrate_segment(params, state, energy, now, seg_end, ledger, tolerance);
        now = seg_end;

        if next_completion.is_some() {
            let cores = &mut state.cores_per_freq;
            state.active_jobs.retain(|j| {
                if j.finish_time <= now {
                    cores[j.freq_index] -= 1;
                    false
                } else {
                    true
                }
            });
        }
        state.check_invariants(params, tolerance)?;
        checks += 1;
        if next_completion.is_none() {
            break;
        }
    }
    state.local_time = to.rem_euclid(HOURS_PER_DAY);
    Ok(checks)
}

fn integrate_segment(
    params: &SimParams,
    state: &mut ServerState,
    energy: &TraceWindow,
    start: f64,
    end: f64,
    ledger: &mut EnergyLedger,
    tolerance: f64,
) {
    let harvested = if end > start { energy.harvest(start, end) } else { 0.0 };
    let seconds = (end - start) * SECONDS_PER_HOUR;
    let mut consumed = 0.0;
    for job in &mut state.active_jobs {
        let drain = if job.finish_time <= end {
            job.remaining_energy
        } else {
            (model::core_power(params, job.frequency) * seconds).min(job.remaining_energy)
        };
        job.remaining_energy -= drain;
        consumed += drain;
    }
    let raw = state.battery + harvested - consumed;
    let cap_loss = (raw - params.battery_capacity).max(0.0);
    state.battery = raw - cap_loss;
    state.reserved = (state.reserved - consumed).max(0.0);
    if state.reserved > state.battery && state.reserved - state.battery <= tolerance {
        state.reserved = state.battery;
    }
    ledger.harvested += harvested;
    ledger.consumed += consumed;
    ledger.cap_loss += cap_loss;
}

/// Classifies a rejection given the state it was decided in.
pub fn rejection_motivation(params: &SimParams, state: &ServerState, feasible: &ActionMask) -> RejectionMotivation {
    let energy_allows_some = (1..=params.num_frequencies()).any(|k| {
        let e = model::energy_consumption(params, Action::new(k), state.data_size_mb).expect("valid code");
        state.reserved + e <= state.battery
    });
    if !energy_allows_some {
        RejectionMotivation::FullReserved
    } else if state.busy_cores() >= params.num_cores {
        RejectionMotivation::FullLoaded
    } else {
        debug_assert!(feasible.count() > 1);
        RejectionMotivation::Conservation
    }
}

/// Applies an accepting or rejecting action to `state` at time `now`.
///
/// Shared by [`Environment::apply_action`] and the look-ahead planner; the
/// caller is responsible for the feasibility check.
pub fn commit_action(
    params: &SimParams,
    state: &mut ServerState,
    now: f64,
    data_size_mb: f64,
    action: Action,
) -> Result<(f64, f64)> {
    let tau = model::processing_time(params, action, data_size_mb)?;
    let energy = model::energy_consumption(params, action, data_size_mb)?;
    if let Some(k) = action.freq_index() {
        state.reserved += energy;
        state.cores_per_freq[k] += 1;
        state.active_jobs.push(ActiveJob {
            finish_time: now + tau,
            frequency: params.freq_options[k],
            freq_index: k,
            remaining_energy: energy,
        });
    }
    Ok((tau, energy))
}

/// A single server driven by an energy trace and a request source.
pub struct Environment {
    params: SimParams,
    cfg: EnvConfig,
    state: ServerState,
    clock: f64,
    trace: Arc<EnergyTrace>,
    energy: TraceWindow,
    workload: Buffered,
    rng_seed: u64,
    ledger: EnergyLedger,
    checks: u64,
}

impl Environment {
    /// Creates an environment already reset to trace offset 0, episode 0.
    pub fn new(
        params: SimParams,
        cfg: EnvConfig,
        trace: Arc<EnergyTrace>,
        workload: Box<dyn RequestSource>,
        rng_seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        if !(0.0..=1.0).contains(&cfg.initial_battery_fraction) {
            return Err(Error::param("initial_battery_fraction must lie in [0, 1]"));
        }
        let energy = TraceWindow::new(trace.clone(), 0, params.panel_size)?;
        let state = ServerState::new(&params, 0.0);
        let mut env = Self {
            params,
            cfg,
            state,
            clock: 0.0,
            trace,
            energy,
            workload: Buffered::new(workload),
            rng_seed,
            ledger: EnergyLedger::default(),
            checks: 0,
        };
        env.reset(0, 0)?;
        Ok(env)
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    /// Replaces the reward trade-off; takes effect for subsequent actions.
    pub fn set_eta(&mut self, eta: f64) -> Result<()> {
        let mut p = self.params.clone();
        p.eta = eta;
        p.validate()?;
        self.params = p;
        Ok(())
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn energy(&self) -> &TraceWindow {
        &self.energy
    }

    pub fn trace(&self) -> &Arc<EnergyTrace> {
        &self.trace
    }

    /// Number of invariant checks performed so far (all passed).
    pub fn invariant_checks(&self) -> u64 {
        self.checks
    }

    /// Starts a new episode at day `trace_offset` of the trace.
    pub fn reset(&mut self, trace_offset: usize, episode: u64) -> Result<()> {
        self.energy = TraceWindow::new(self.trace.clone(), trace_offset, self.params.panel_size)?;
        let battery = self.cfg.initial_battery_fraction * self.params.battery_capacity;
        self.state = ServerState::new(&self.params, battery);
        self.clock = 0.0;
        self.ledger = EnergyLedger { start_battery: battery, ..EnergyLedger::default() };
        self.workload.restart(seed::derive(self.rng_seed, &[episode]));
        Ok(())
    }

    /// Processes every completion in `(clock, t]` and moves the clock to `t`.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        self.checks += advance_state(
            &self.params,
            &mut self.state,
            &self.energy,
            self.clock,
            t,
            &mut self.ledger,
            self.cfg.invariant_tolerance,
        )?;
        self.clock = t;
        Ok(())
    }

    /// Upcoming requests without consuming them.
    pub fn peek_requests(&mut self, n: usize) -> Vec<Request> {
        self.workload.peek(n)
    }

    /// Pops the next request and advances the clock to its arrival.
    pub fn next_arrival(&mut self) -> Result<Option<Request>> {
        let Some(req) = self.workload.pop() else { return Ok(None) };
        self.advance_to(req.arrival_time)?;
        self.state.data_size_mb = req.data_size_mb;
        Ok(Some(req))
    }

    pub fn feasible_actions(&self) -> ActionMask {
        model::feasible_actions(&self.params, &self.state)
    }

    /// Executes `action` for `req`, which must be the request at the clock.
    pub fn apply_action(&mut self, req: &Request, action: Action) -> Result<StepOutcome> {
        if req.arrival_time != self.clock {
            return Err(Error::contract(format!(
                "request {} arrives at {} but clock is {}",
                req.index, req.arrival_time, self.clock
            )));
        }
        self.state.data_size_mb = req.data_size_mb;
        let feasible = self.feasible_actions();
        if !feasible.contains(action) {
            return Err(Error::contract(format!(
                "action {action} infeasible for request {} (feasible: {:?})",
                req.index,
                feasible.iter().map(Action::code).collect::<Vec<_>>()
            )));
        }
        let prev_state = self.state.snapshot();
        let motivation = if action.is_reject() {
            rejection_motivation(&self.params, &self.state, &feasible)
        } else {
            RejectionMotivation::None
        };
        let reward = model::reward(&self.params, action, req.data_size_mb)?;
        let (tau, energy) = commit_action(&self.params, &mut self.state, self.clock, req.data_size_mb, action)?;
        self.state.check_invariants(&self.params, self.cfg.invariant_tolerance)?;
        self.checks += 1;
        Ok(StepOutcome {
            request: *req,
            prev_state,
            action,
            reward,
            processing_time: tau,
            energy,
            next_state: self.state.snapshot(),
            rejection_motivation: motivation,
        })
    }

    /// Serves requests with `scheduler` until the next arrival exceeds `horizon` hours.
    pub fn run_episode(&mut self, scheduler: &mut dyn Scheduler, horizon: f64) -> Result<Vec<StepOutcome>> {
        if !(horizon > 0.0) {
            return Err(Error::param("horizon must be positive"));
        }
        scheduler.begin_episode(&self.params);
        let mut log = Vec::new();
        loop {
            match self.workload.peek(1).first() {
                Some(r) if r.arrival_time <= horizon => {}
                _ => break,
            }
            let req = self.next_arrival()?.expect("peeked request exists");
            let upcoming = match scheduler.lookahead() {
                0 => Vec::new(),
                n => self.workload.peek(n),
            };
            let feasible = self.feasible_actions();
            let decision = Decision {
                params: &self.params,
                state: &self.state,
                request: &req,
                feasible,
                lookahead: (scheduler.lookahead() > 0).then(|| Lookahead {
                    upcoming: &upcoming,
                    energy: &self.energy,
                    clock: self.clock,
                }),
            };
            let action = scheduler.decide(&decision);
            let outcome = self.apply_action(&req, action)?;
            scheduler.record(&outcome);
            log.push(outcome);
        }
        Ok(log)
    }
}

/// Writes one JSON record per outcome.
pub fn write_transition_log<W: Write>(mut w: W, outcomes: &[StepOutcome]) -> Result<()> {
    for o in outcomes {
        serde_json::to_writer(&mut w, o)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_transition_log<R: BufRead>(r: R) -> Result<Vec<StepOutcome>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let o = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        out.push(o);
    }
    Ok(out)
}
