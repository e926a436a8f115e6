//! Double deep-Q scheduler: ε-greedy training with replay memory and a
//! periodically synced target network, plus greedy application.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Action, ActionMask, ServerState, SimParams};
use crate::neural::{GradientBuffer, QNetwork, Workspace, DEFAULT_HIDDEN};
use crate::policy::{Decision, Scheduler};
use crate::scalar::Scalar;
use crate::seed;
use crate::sim::{Environment, HOURS_PER_DAY};

/// State features in `[0, 1]^(n + 4)`:
/// `[T/24, B/B_max, S/B_max, ψ_1/m, …, ψ_n/m, (d - d_min)/(d_max - d_min)]`.
pub fn uniformize<T: Scalar>(params: &SimParams, state: &ServerState) -> Vec<T> {
    let mut out = vec![T::zero(); params.num_frequencies() + 4];
    uniformize_into(params, state, &mut out);
    out
}

pub fn uniformize_into<T: Scalar>(params: &SimParams, state: &ServerState, out: &mut [T]) {
    let n = params.num_frequencies();
    assert_eq!(out.len(), n + 4, "feature buffer length");
    let cap = params.battery_capacity;
    let m = params.num_cores as f64;
    let [lo, hi] = params.data_size_range;
    out[0] = T::lit(state.local_time / HOURS_PER_DAY);
    out[1] = T::lit(state.battery / cap);
    out[2] = T::lit(state.reserved / cap);
    for (o, &c) in out[3..3 + n].iter_mut().zip(&state.cores_per_freq) {
        *o = T::lit(c as f64 / m);
    }
    out[n + 3] = T::lit(if hi > lo { ((state.data_size_mb - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eps0: f64,
    pub eps_min: f64,
    /// Decay constant of the exploration schedule, in steps.
    pub xi: f64,
    pub beta: f64,
    /// Target network sync period, in steps.
    pub zeta: u64,
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub lr: f64,
    pub episodes: u64,
    pub episode_horizon_days: usize,
    pub hidden: [usize; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eps0: 0.5,
            eps_min: 0.01,
            xi: 3e4,
            beta: 0.995,
            zeta: 5000,
            batch_size: 80,
            memory_capacity: 1_000_000,
            lr: 5e-4,
            episodes: 150,
            episode_horizon_days: 10,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.eps_min && self.eps_min <= self.eps0 && self.eps0 <= 1.0) {
            return Err(Error::param("need 0 <= eps_min <= eps0 <= 1"));
        }
        if !(self.xi > 0.0) {
            return Err(Error::param("xi must be positive"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::param("beta must lie in (0, 1)"));
        }
        if self.zeta == 0 || self.batch_size == 0 || self.episode_horizon_days == 0 || self.episodes == 0 {
            return Err(Error::param("zeta, batch_size, episodes and episode_horizon_days must be positive"));
        }
        if self.memory_capacity < self.batch_size {
            return Err(Error::param("memory_capacity must hold at least one batch"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr must be positive"));
        }
        Ok(())
    }
}

/// `ε_i = ε_min + (ε_0 - ε_min) · exp(-i / ξ)`.
pub fn epsilon(cfg: &TrainConfig, step: u64) -> f64 {
    cfg.eps_min + (cfg.eps0 - cfg.eps_min) * (-(step as f64) / cfg.xi).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub features: Vec<T>,
    pub action: Action,
    pub reward: f64,
    pub next_features: Vec<T>,
    /// Feasible actions at the next state.
    pub next_feasible: ActionMask,
    /// No next state exists; the target is the reward alone.
    pub terminal: bool,
}

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayMemory<T> {
    capacity: usize,
    items: Vec<Transition<T>>,
    next: usize,
}

impl<T: Clone> ReplayMemory<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity");
        Self { capacity, items: Vec::new(), next: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition<T>) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<T>> {
        self.items.iter()
    }

    /// `count` distinct transitions chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<&Transition<T>> {
        rand::seq::index::sample(rng, self.items.len(), count.min(self.items.len()))
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// Feasible action with the largest value; ties go to the lowest code.
pub fn argmax_masked<T: Scalar>(q: &[T], mask: &ActionMask) -> Action {
    let mut best: Option<(Action, T)> = None;
    for a in mask.iter() {
        let v = q[a.code()];
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    best.map_or(Action::REJECT, |(a, _)| a)
}

/// ε-greedy choice restricted to `feasible`.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(
    net: &QNetwork<T>,
    features: &[T],
    feasible: &ActionMask,
    eps: f64,
    rng: &mut R,
) -> Result<Action> {
    if rng.random::<f64>() < eps {
        let pick = rng.random_range(0..feasible.count());
        return Ok(feasible.iter().nth(pick).expect("pick within count"));
    }
    Ok(argmax_masked(&net.forward(features)?, feasible))
}

/// `r + β · Q(s', argmax_{a' ∈ A_s'} Q(s', a'; θ); θ⁻)`, or `r` at a terminal state.
pub fn double_q_target<T: Scalar>(
    q_net: &QNetwork<T>,
    target_net: &QNetwork<T>,
    tr: &Transition<T>,
    beta: f64,
) -> Result<T> {
    let r = T::lit(tr.reward);
    if tr.terminal {
        return Ok(r);
    }
    let a = argmax_masked(&q_net.forward(&tr.next_features)?, &tr.next_feasible);
    let v = target_net.forward(&tr.next_features)?[a.code()];
    Ok(r + T::lit(beta) * v)
}

/// Observation of a decision process at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub features: Vec<T>,
    pub feasible: ActionMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<T> {
    pub reward: f64,
    /// `None` when the process has no next state.
    pub next: Option<Observation<T>>,
    /// The episode ends here although `next` exists.
    pub truncated: bool,
}

/// An episodic environment the agent can be trained on.
pub trait DecisionProcess<T> {
    fn feature_len(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Starts episode `episode`, returning the first observation if any.
    fn begin(&mut self, episode: u64) -> Result<Option<Observation<T>>>;
    fn step(&mut self, action: Action) -> Result<StepResult<T>>;
}

/// The server environment as a decision process with rotating trace windows.
pub struct SimProcess<'e> {
    env: &'e mut Environment,
    horizon_days: usize,
    windows: usize,
    pending: Option<crate::model::Request>,
}

impl<'e> SimProcess<'e> {
    pub fn new(env: &'e mut Environment, horizon_days: usize) -> Result<Self> {
        if horizon_days == 0 {
            return Err(Error::param("horizon_days must be positive"));
        }
        let days = env.trace().days();
        if days < horizon_days {
            return Err(Error::param(format!("trace has {days} days, episodes need {horizon_days}")));
        }
        Ok(Self { env, horizon_days, windows: days / horizon_days, pending: None })
    }

    fn horizon(&self) -> f64 {
        self.horizon_days as f64 * HOURS_PER_DAY
    }

    fn observe<T: Scalar>(&self) -> Observation<T> {
        Observation { features: uniformize(self.env.params(), self.env.state()), feasible: self.env.feasible_actions() }
    }
}

impl<T: Scalar> DecisionProcess<T> for SimProcess<'_> {
    fn feature_len(&self) -> usize {
        self.env.params().num_frequencies() + 4
    }

    fn num_actions(&self) -> usize {
        self.env.params().num_actions()
    }

    fn begin(&mut self, episode: u64) -> Result<Option<Observation<T>>> {
        let offset = (episode as usize % self.windows) * self.horizon_days;
        self.env.reset(offset, episode)?;
        self.pending = None;
        match self.env.peek_requests(1).first() {
            Some(r) if r.arrival_time <= self.horizon() => {}
            _ => return Ok(None),
        }
        self.pending = self.env.next_arrival()?;
        Ok(Some(self.observe()))
    }

    fn step(&mut self, action: Action) -> Result<StepResult<T>> {
        let req = self.pending.take().ok_or_else(|| Error::contract("step called without a pending request"))?;
        let outcome = self.env.apply_action(&req, action)?;
        let Some(next) = self.env.next_arrival()? else {
            return Ok(StepResult { reward: outcome.reward, next: None, truncated: false });
        };
        let truncated = next.arrival_time > self.horizon();
        self.pending = (!truncated).then_some(next);
        Ok(StepResult { reward: outcome.reward, next: Some(self.observe()), truncated })
    }
}

/// Totals of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub updates: u64,
    pub target_syncs: u64,
    pub episode_rewards: Vec<f64>,
    pub mean_loss_last_episode: f64,
}

/// Online and target networks, replay memory and the exploration state.
pub struct NafaAgent<T: Scalar> {
    cfg: TrainConfig,
    online: QNetwork<T>,
    target: QNetwork<T>,
    memory: ReplayMemory<T>,
    rng: ChaCha8Rng,
    step: u64,
    syncs: u64,
    updates: u64,
    grads: GradientBuffer<T>,
    ws_current: Workspace<T>,
    ws_next_online: Workspace<T>,
    ws_next_target: Workspace<T>,
    batch_x: Vec<T>,
    batch_next: Vec<T>,
    d_out: Vec<T>,
}

impl<T: Scalar> NafaAgent<T> {
    pub fn new(cfg: TrainConfig, feature_len: usize, num_actions: usize, rng_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed::derive(rng_seed, &[seed::tag("init")]));
        let online = QNetwork::init(feature_len, cfg.hidden, num_actions, &mut rng)?;
        let target = online.clone();
        let grads = GradientBuffer::zeros_like(&online);
        Ok(Self {
            memory: ReplayMemory::new(cfg.memory_capacity),
            rng: seed::rng(seed::derive(rng_seed, &[seed::tag("explore")])),
            cfg,
            online,
            target,
            step: 0,
            syncs: 0,
            updates: 0,
            grads,
            ws_current: Workspace::new(),
            ws_next_online: Workspace::new(),
            ws_next_target: Workspace::new(),
            batch_x: Vec::new(),
            batch_next: Vec::new(),
            d_out: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn online(&self) -> &QNetwork<T> {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut QNetwork<T> {
        &mut self.online
    }

    pub fn target(&self) -> &QNetwork<T> {
        &self.target
    }

    pub fn memory(&self) -> &ReplayMemory<T> {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut ReplayMemory<T> {
        &mut self.memory
    }

    /// Global step counter across episodes.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn target_syncs(&self) -> u64 {
        self.syncs
    }

    pub fn into_network(self) -> QNetwork<T> {
        self.online
    }

    pub fn sync_target(&mut self) {
        self.online.copy_into(&mut self.target).expect("networks share a shape");
        self.syncs += 1;
    }

    /// One gradient step on the mean squared double-Q error of `batch`.
    ///
    /// Returns the loss before the update.
    pub fn train_step(&mut self, batch: &[&Transition<T>]) -> Result<T> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::param("empty minibatch"));
        }
        let k = self.online.input_len();
        let n_out = self.online.output_len();
        self.batch_x.clear();
        self.batch_next.clear();
        for tr in batch {
            if tr.features.len() != k || tr.next_features.len() != k {
                return Err(Error::shape("transition features do not match the network input"));
            }
            self.batch_x.extend_from_slice(&tr.features);
            self.batch_next.extend_from_slice(&tr.next_features);
        }
        let q_next_online = self.online.forward_cached(&mut self.ws_next_online, &self.batch_next, b)?;
        let q_next_target = self.target.forward_cached(&mut self.ws_next_target, &self.batch_next, b)?;
        let beta = T::lit(self.cfg.beta);
        let targets: Vec<T> = batch
            .iter()
            .enumerate()
            .map(|(i, tr)| {
                let r = T::lit(tr.reward);
                if tr.terminal {
                    return r;
                }
                let a = argmax_masked(&q_next_online[i * n_out..(i + 1) * n_out], &tr.next_feasible);
                r + beta * q_next_target[i * n_out + a.code()]
            })
            .collect();

        let q = self.online.forward_cached(&mut self.ws_current, &self.batch_x, b)?;
        self.d_out.clear();
        self.d_out.resize(b * n_out, T::zero());
        let scale = T::lit(2.0 / b as f64);
        let mut loss = T::zero();
        for (i, tr) in batch.iter().enumerate() {
            let j = i * n_out + tr.action.code();
            let err = q[j] - targets[i];
            loss += err * err;
            self.d_out[j] = scale * err;
        }
        loss /= T::lit(b as f64);

        self.grads.clear();
        self.online.backward_cached(&mut self.ws_current, &self.batch_x, &self.d_out, &mut self.grads)?;
        self.online.sgd_step(&self.grads, T::lit(self.cfg.lr))?;
        self.updates += 1;
        Ok(loss)
    }

    /// Records `tr`, samples a minibatch once enough transitions are stored,
    /// updates, and syncs the target every `zeta` steps.
    fn learn(&mut self, tr: Transition<T>) -> Result<Option<T>> {
        self.memory.push(tr);
        self.step += 1;
        let loss = if self.memory.len() >= self.cfg.batch_size {
            let idx = rand::seq::index::sample(&mut self.rng, self.memory.len(), self.cfg.batch_size);
            let memory = std::mem::replace(&mut self.memory, ReplayMemory::new(1));
            let batch: Vec<&Transition<T>> = idx.into_iter().map(|i| &memory.items[i]).collect();
            let loss = self.train_step(&batch);
            self.memory = memory;
            Some(loss?)
        } else {
            None
        };
        if self.step.is_multiple_of(self.cfg.zeta) {
            self.sync_target();
        }
        Ok(loss)
    }

    /// Runs `cfg.episodes` training episodes on `process`.
    ///
    /// When `sink` is given, one CSV row `step,epsilon,loss,episode_reward`
    /// is written per step (`loss` empty before the first update).
    pub fn train(
        &mut self,
        process: &mut dyn DecisionProcess<T>,
        mut sink: Option<&mut dyn Write>,
    ) -> Result<TrainSummary> {
        if process.feature_len() != self.online.input_len() || process.num_actions() != self.online.output_len() {
            return Err(Error::shape("decision process does not match the network shape"));
        }
        if let Some(w) = sink.as_deref_mut() {
            writeln!(w, "step,epsilon,loss,episode_reward")?;
        }
        let mut summary = TrainSummary::default();
        for episode in 0..self.cfg.episodes {
            let mut episode_reward = 0.0;
            let mut loss_sum = 0.0;
            let mut loss_count = 0u64;
            let Some(mut obs) = process.begin(episode)? else {
                summary.episode_rewards.push(0.0);
                continue;
            };
            loop {
                let eps = epsilon(&self.cfg, self.step);
                let action = select_action(&self.online, &obs.features, &obs.feasible, eps, &mut self.rng)?;
                if !obs.feasible.contains(action) {
                    return Err(Error::contract(format!("agent chose infeasible action {action}")));
                }
                let res = process.step(action)?;
                episode_reward += res.reward;
                let (next_features, next_feasible, terminal) = match &res.next {
                    Some(o) => (o.features.clone(), o.feasible, false),
                    None => {
                        (vec![T::zero(); obs.features.len()], ActionMask::reject_only(obs.feasible.space_len()), true)
                    }
                };
                let loss = self.learn(Transition {
                    features: std::mem::take(&mut obs.features),
                    action,
                    reward: res.reward,
                    next_features,
                    next_feasible,
                    terminal,
                })?;
                if let Some(l) = loss {
                    loss_sum += l.as_f64();
                    loss_count += 1;
                }
                if let Some(w) = sink.as_deref_mut() {
                    match loss {
                        Some(l) => writeln!(w, "{},{},{},{}", self.step, eps, l, episode_reward)?,
                        None => writeln!(w, "{},{},,{}", self.step, eps, episode_reward)?,
                    }
                }
                match res.next {
                    Some(o) if !res.truncated => obs = o,
                    _ => break,
                }
            }
            if !self.online.is_finite() {
                return Err(Error::contract(format!("non-finite network parameters in episode {episode}")));
            }
            summary.episode_rewards.push(episode_reward);
            summary.mean_loss_last_episode = if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 };
        }
        summary.steps = self.step;
        summary.updates = self.updates;
        summary.target_syncs = self.syncs;
        Ok(summary)
    }
}

/// Greedy action of `net` over the feasible set of `state`.
pub fn act_greedy<T: Scalar>(net: &QNetwork<T>, params: &SimParams, state: &ServerState) -> Result<Action> {
    let mask = model::feasible_actions(params, state);
    if mask.count() == 1 {
        return Ok(Action::REJECT);
    }
    Ok(argmax_masked(&net.forward(&uniformize::<T>(params, state))?, &mask))
}

/// Applies a trained network greedily.
#[derive(Debug, Clone)]
pub struct NafaScheduler<T> {
    net: QNetwork<T>,
    features: Vec<T>,
}

impl<T: Scalar> NafaScheduler<T> {
    pub fn new(net: QNetwork<T>) -> Self {
        Self { net, features: Vec::new() }
    }

    pub fn network(&self) -> &QNetwork<T> {
        &self.net
    }
}

impl<T: Scalar> Scheduler for NafaScheduler<T> {
    fn name(&self) -> &str {
        "nafa"
    }

    fn decide(&mut self, d: &Decision<'_>) -> Action {
        if d.feasible.count() == 1 {
            return Action::REJECT;
        }
        self.features.resize(d.params.num_frequencies() + 4, T::zero());
        uniformize_into(d.params, d.state, &mut self.features);
        let q = self.net.forward(&self.features).expect("network sized for these params");
        argmax_masked(&q, &d.feasible)
    }
}
