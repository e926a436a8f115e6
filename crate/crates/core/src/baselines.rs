//! Comparison schedulers: Best Fit, Worst Fit, disjoint linUCB and the
//! prophetic sliding-window planner.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::agent::uniformize;
use crate::energy::TraceWindow;
use crate::error::{Error, Result};
use crate::model::{self, Action, ActionMask, Request, ServerState, SimParams};
use crate::policy::{Decision, Scheduler};
use crate::sim::{self, EnergyLedger, StepOutcome};

/// Lowest-frequency feasible action, or rejection.
pub fn best_fit(params: &SimParams, state: &ServerState) -> Action {
    model::feasible_actions(params, state).min_accepting().unwrap_or(Action::REJECT)
}

/// Highest-frequency feasible action, or rejection.
pub fn worst_fit(params: &SimParams, state: &ServerState) -> Action {
    model::feasible_actions(params, state).max_accepting().unwrap_or(Action::REJECT)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BestFit;

impl Scheduler for BestFit {
    fn name(&self) -> &str {
        "bf"
    }

    fn decide(&mut self, d: &Decision<'_>) -> Action {
        d.feasible.min_accepting().unwrap_or(Action::REJECT)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WorstFit;

impl Scheduler for WorstFit {
    fn name(&self) -> &str {
        "wf"
    }

    fn decide(&mut self, d: &Decision<'_>) -> Action {
        d.feasible.max_accepting().unwrap_or(Action::REJECT)
    }
}

pub const DEFAULT_LINUCB_ALPHA: f64 = 0.5;

/// Disjoint linUCB: one ridge-regression model per action.
#[derive(Debug, Clone, PartialEq)]
pub struct LinUcbModel {
    alpha: f64,
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

/// Plain-vector form of [`LinUcbModel`] for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinUcbSnapshot {
    pub alpha: f64,
    pub dim: usize,
    /// Row-major `A_a` per action.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl LinUcbModel {
    pub fn new(dim: usize, num_actions: usize, alpha: f64) -> Result<Self> {
        if dim == 0 || num_actions == 0 {
            return Err(Error::param("linUCB needs a positive dimension and action count"));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::param("linUCB alpha must be finite and non-negative"));
        }
        Ok(Self { alpha, a: vec![DMatrix::identity(dim, dim); num_actions], b: vec![DVector::zeros(dim); num_actions] })
    }

    pub fn dim(&self) -> usize {
        self.b[0].len()
    }

    pub fn num_actions(&self) -> usize {
        self.a.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn design_matrix(&self, action: Action) -> &DMatrix<f64> {
        &self.a[action.code()]
    }

    pub fn response(&self, action: Action) -> &DVector<f64> {
        &self.b[action.code()]
    }

    fn context(&self, features: &[f64]) -> Result<DVector<f64>> {
        if features.len() != self.dim() {
            return Err(Error::shape(format!("linUCB expects {} features, got {}", self.dim(), features.len())));
        }
        Ok(DVector::from_column_slice(features))
    }

    /// Upper confidence bound `θᵀx + α √(xᵀ A⁻¹ x)` for one action.
    pub fn ucb(&self, features: &[f64], action: Action) -> Result<f64> {
        let x = self.context(features)?;
        let a = self.a.get(action.code()).ok_or_else(|| Error::param(format!("action {action} out of range")))?;
        let chol = a.clone().cholesky().ok_or_else(|| Error::contract("linUCB design matrix lost definiteness"))?;
        let theta = chol.solve(&self.b[action.code()]);
        let width = x.dot(&chol.solve(&x)).max(0.0).sqrt();
        Ok(theta.dot(&x) + self.alpha * width)
    }

    /// Feasible action with the largest bound; ties go to the lowest code.
    pub fn select(&self, features: &[f64], feasible: &ActionMask) -> Result<Action> {
        let mut best = (Action::REJECT, f64::NEG_INFINITY);
        for a in feasible.iter() {
            let u = self.ucb(features, a)?;
            if u > best.1 {
                best = (a, u);
            }
        }
        Ok(best.0)
    }

    /// `A_a += x xᵀ`, `b_a += r x`.
    pub fn update(&mut self, features: &[f64], action: Action, reward: f64) -> Result<()> {
        let x = self.context(features)?;
        let k = action.code();
        if k >= self.a.len() {
            return Err(Error::param(format!("action {action} out of range")));
        }
        self.a[k].ger(1.0, &x, &x, 1.0);
        self.b[k].axpy(reward, &x, 1.0);
        Ok(())
    }

    pub fn snapshot(&self) -> LinUcbSnapshot {
        LinUcbSnapshot {
            alpha: self.alpha,
            dim: self.dim(),
            a: self.a.iter().map(|m| m.transpose().as_slice().to_vec()).collect(),
            b: self.b.iter().map(|v| v.as_slice().to_vec()).collect(),
        }
    }

    pub fn from_snapshot(s: &LinUcbSnapshot) -> Result<Self> {
        let mut model = Self::new(s.dim, s.a.len(), s.alpha)?;
        if s.b.len() != s.a.len() {
            return Err(Error::shape("linUCB snapshot has mismatched action counts"));
        }
        for (k, (a, b)) in s.a.iter().zip(&s.b).enumerate() {
            if a.len() != s.dim * s.dim || b.len() != s.dim {
                return Err(Error::shape("linUCB snapshot has wrong matrix sizes"));
            }
            model.a[k] = DMatrix::from_row_slice(s.dim, s.dim, a);
            model.b[k] = DVector::from_column_slice(b);
        }
        Ok(model)
    }
}

/// linUCB context: the uniformized state plus a constant intercept.
pub fn linucb_context(params: &SimParams, state: &ServerState) -> Vec<f64> {
    let mut x: Vec<f64> = uniformize(params, state);
    x.push(1.0);
    x
}

/// Scheduler wrapper; learns from its own outcomes unless frozen.
#[derive(Debug, Clone)]
pub struct LinUcb {
    model: LinUcbModel,
    learning: bool,
    last_context: Vec<f64>,
}

impl LinUcb {
    pub fn new(params: &SimParams, alpha: f64) -> Result<Self> {
        let dim = params.num_frequencies() + 5;
        Ok(Self::from_model(LinUcbModel::new(dim, params.num_actions(), alpha)?))
    }

    pub fn from_model(model: LinUcbModel) -> Self {
        Self { model, learning: true, last_context: Vec::new() }
    }

    pub fn set_learning(&mut self, learning: bool) {
        self.learning = learning;
    }

    pub fn model(&self) -> &LinUcbModel {
        &self.model
    }
}

impl Scheduler for LinUcb {
    fn name(&self) -> &str {
        "linucb"
    }

    fn decide(&mut self, d: &Decision<'_>) -> Action {
        self.last_context = linucb_context(d.params, d.state);
        self.model.select(&self.last_context, &d.feasible).expect("context sized from params")
    }

    fn record(&mut self, outcome: &StepOutcome) {
        if self.learning {
            self.model.update(&self.last_context, outcome.action, outcome.reward).expect("context sized from params");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwConfig {
    /// Look-ahead window `M`.
    pub window: usize,
    /// Decisions committed per plan, `L <= M`.
    pub commit: usize,
    pub beam_width: usize,
}

impl Default for SwConfig {
    fn default() -> Self {
        Self { window: 500, commit: 300, beam_width: 64 }
    }
}

impl SwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.commit == 0 || self.commit > self.window {
            return Err(Error::param("sliding window needs 0 < commit <= window"));
        }
        if self.beam_width == 0 {
            return Err(Error::param("beam_width must be positive"));
        }
        Ok(())
    }
}

/// Result of planning one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    /// Actions for the first `min(L, len)` requests.
    pub committed: Vec<Action>,
    /// Planned reward over the whole window.
    pub window_reward: f64,
    /// Number of requests the plan covered.
    pub window_len: usize,
}

#[derive(Clone)]
struct Node {
    state: ServerState,
    clock: f64,
    reward: f64,
}

struct Candidate {
    parent: usize,
    action: Action,
    reward: f64,
    free_energy: f64,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.reward
        .total_cmp(&a.reward)
        .then(b.free_energy.total_cmp(&a.free_energy))
        .then(a.parent.cmp(&b.parent))
        .then(a.action.cmp(&b.action))
}

/// Simulates `actions` on `requests` from `state` and returns the total reward,
/// or `None` if some action is infeasible when reached.
pub fn rollout_reward(
    params: &SimParams,
    state: &ServerState,
    clock: f64,
    requests: &[Request],
    energy: &TraceWindow,
    actions: &[Action],
    tolerance: f64,
) -> Result<Option<f64>> {
    let mut s = state.clone();
    let mut now = clock;
    let mut ledger = EnergyLedger::default();
    let mut total = 0.0;
    for (r, &a) in requests.iter().zip(actions) {
        sim::advance_state(params, &mut s, energy, now, r.arrival_time, &mut ledger, tolerance)?;
        now = r.arrival_time;
        s.data_size_mb = r.data_size_mb;
        if !model::feasible_actions(params, &s).contains(a) {
            return Ok(None);
        }
        total += model::reward(params, a, r.data_size_mb)?;
        sim::commit_action(params, &mut s, now, r.data_size_mb, a)?;
    }
    Ok(Some(total))
}

fn myopic_plan(
    params: &SimParams,
    state: &ServerState,
    clock: f64,
    requests: &[Request],
    energy: &TraceWindow,
    tolerance: f64,
) -> Result<(Vec<Action>, f64)> {
    let mut s = state.clone();
    let mut now = clock;
    let mut ledger = EnergyLedger::default();
    let mut total = 0.0;
    let mut actions = Vec::with_capacity(requests.len());
    for r in requests {
        sim::advance_state(params, &mut s, energy, now, r.arrival_time, &mut ledger, tolerance)?;
        now = r.arrival_time;
        s.data_size_mb = r.data_size_mb;
        let mut best = (Action::REJECT, 0.0);
        for a in model::feasible_actions(params, &s).iter() {
            let rew = model::reward(params, a, r.data_size_mb)?;
            if rew > best.1 {
                best = (a, rew);
            }
        }
        total += best.1;
        actions.push(best.0);
        sim::commit_action(params, &mut s, now, r.data_size_mb, best.0)?;
    }
    Ok((actions, total))
}

/// Beam search over the actions for `requests` (the first one arriving at
/// `clock`, where `state` already is), keeping the `beam_width` best partial
/// plans by accumulated reward, then by unreserved energy.
///
/// The greedy myopic plan is kept if no beam leaf beats it.
pub fn sliding_window_plan(
    params: &SimParams,
    state: &ServerState,
    clock: f64,
    requests: &[Request],
    energy: &TraceWindow,
    cfg: &SwConfig,
    tolerance: f64,
) -> Result<WindowPlan> {
    cfg.validate()?;
    let requests = &requests[..requests.len().min(cfg.window)];
    let commit = cfg.commit.min(requests.len());
    if requests.is_empty() {
        return Ok(WindowPlan { committed: Vec::new(), window_reward: 0.0, window_len: 0 });
    }

    let mut beam = vec![Node { state: state.clone(), clock, reward: 0.0 }];
    // per depth, the (parent index, action) of every surviving node
    let mut trail: Vec<Vec<(usize, Action)>> = Vec::with_capacity(requests.len());
    let mut candidates = Vec::new();
    let mut ledger = EnergyLedger::default();
    for r in requests {
        candidates.clear();
        for (i, node) in beam.iter_mut().enumerate() {
            sim::advance_state(params, &mut node.state, energy, node.clock, r.arrival_time, &mut ledger, tolerance)?;
            node.clock = r.arrival_time;
            node.state.data_size_mb = r.data_size_mb;
            let free = node.state.battery - node.state.reserved;
            for a in model::feasible_actions(params, &node.state).iter() {
                candidates.push(Candidate {
                    parent: i,
                    action: a,
                    reward: node.reward + model::reward(params, a, r.data_size_mb)?,
                    free_energy: free - model::energy_consumption(params, a, r.data_size_mb)?,
                });
            }
        }
        if candidates.len() > cfg.beam_width {
            candidates.select_nth_unstable_by(cfg.beam_width - 1, rank);
            candidates.truncate(cfg.beam_width);
        }
        candidates.sort_by(rank);
        let next: Vec<Node> = candidates
            .iter()
            .map(|c| -> Result<Node> {
                let mut child = beam[c.parent].clone();
                sim::commit_action(params, &mut child.state, child.clock, r.data_size_mb, c.action)?;
                child.reward = c.reward;
                Ok(child)
            })
            .collect::<Result<_>>()?;
        trail.push(candidates.iter().map(|c| (c.parent, c.action)).collect());
        beam = next;
    }

    let best_reward = beam[0].reward;
    let mut best_actions = vec![Action::REJECT; requests.len()];
    let mut idx = 0;
    for (depth, level) in trail.iter().enumerate().rev() {
        let (parent, action) = level[idx];
        best_actions[depth] = action;
        idx = parent;
    }
    let (greedy, greedy_reward) = myopic_plan(params, state, clock, requests, energy, tolerance)?;
    let (mut actions, reward) =
        if greedy_reward > best_reward { (greedy, greedy_reward) } else { (best_actions, best_reward) };
    actions.truncate(commit);
    Ok(WindowPlan { committed: actions, window_reward: reward, window_len: requests.len() })
}

/// Rolling-horizon scheduler replanning every `commit` requests.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    cfg: SwConfig,
    tolerance: f64,
    queue: std::collections::VecDeque<Action>,
    discrepancies: u64,
    plans: u64,
}

impl SlidingWindow {
    pub fn new(cfg: SwConfig, tolerance: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, tolerance, queue: Default::default(), discrepancies: 0, plans: 0 })
    }

    /// Planned actions that turned out infeasible and were replaced by rejection.
    pub fn discrepancies(&self) -> u64 {
        self.discrepancies
    }

    pub fn plans(&self) -> u64 {
        self.plans
    }
}

impl Scheduler for SlidingWindow {
    fn name(&self) -> &str {
        "sw"
    }

    fn lookahead(&self) -> usize {
        self.cfg.window - 1
    }

    fn begin_episode(&mut self, _params: &SimParams) {
        self.queue.clear();
    }

    fn decide(&mut self, d: &Decision<'_>) -> Action {
        if self.queue.is_empty() {
            let look = d.lookahead.as_ref().expect("environment honours lookahead()");
            let mut window = Vec::with_capacity(look.upcoming.len() + 1);
            window.push(*d.request);
            window.extend_from_slice(look.upcoming);
            let plan =
                sliding_window_plan(d.params, d.state, look.clock, &window, look.energy, &self.cfg, self.tolerance)
                    .expect("planner replays validated dynamics");
            self.plans += 1;
            self.queue.extend(plan.committed);
        }
        let planned = self.queue.pop_front().unwrap_or(Action::REJECT);
        if d.feasible.contains(planned) {
            planned
        } else {
            self.discrepancies += 1;
            Action::REJECT
        }
    }
}
