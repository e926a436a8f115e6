//! The scheduler interface consulted by the environment at every arrival.

use crate::energy::TraceWindow;
use crate::model::{Action, ActionMask, Request, ServerState, SimParams};
use crate::sim::StepOutcome;

/// Prophetic information handed to look-ahead schedulers.
pub struct Lookahead<'a> {
    /// Requests after the current one, in arrival order.
    pub upcoming: &'a [Request],
    pub energy: &'a TraceWindow,
    pub clock: f64,
}

/// Everything a scheduler may observe when a request arrives.
pub struct Decision<'a> {
    pub params: &'a SimParams,
    pub state: &'a ServerState,
    pub request: &'a Request,
    pub feasible: ActionMask,
    pub lookahead: Option<Lookahead<'a>>,
}

pub trait Scheduler {
    fn name(&self) -> &str;

    /// Number of future requests this scheduler wants to see.
    fn lookahead(&self) -> usize {
        0
    }

    fn begin_episode(&mut self, _params: &SimParams) {}

    /// Must return a member of `decision.feasible`.
    fn decide(&mut self, decision: &Decision<'_>) -> Action;

    fn record(&mut self, _outcome: &StepOutcome) {}
}

/// Replays a fixed action list, rejecting once it is exhausted.
#[derive(Debug, Clone)]
pub struct Scripted {
    actions: Vec<Action>,
    cursor: usize,
}

impl Scripted {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions, cursor: 0 }
    }
}

impl Scheduler for Scripted {
    fn name(&self) -> &str {
        "scripted"
    }

    fn begin_episode(&mut self, _params: &SimParams) {
        self.cursor = 0;
    }

    fn decide(&mut self, _decision: &Decision<'_>) -> Action {
        let a = self.actions.get(self.cursor).copied().unwrap_or(Action::REJECT);
        self.cursor += 1;
        a
    }
}
