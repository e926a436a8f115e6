//! Event-driven simulation of a single mobile-edge server powered by
//! harvested solar energy, with per-request DVFS frequency scheduling.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: domain types and the closed-form per-request formulas.
//! * [`energy`] and [`workload`]: the two stochastic input processes.
//! * [`sim`]: the event-driven environment (battery, reservation, cores).
//! * [`neural`]: a small fixed-shape MLP with hand-written backprop.
//! * [`agent`]: the double deep-Q scheduler (training and greedy application).
//! * [`baselines`]: Best Fit, Worst Fit, linUCB and the prophetic sliding window.
//! * [`metrics`]: aggregation of transition logs into evaluation reports.
//!
//! Numerical code is generic over [`Scalar`] (`f32`/`f64`). The simulator
//! itself runs in `f64`; the aliases below name the concrete instantiations.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod baselines;
pub mod energy;
pub mod error;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod policy;
pub mod scalar;
pub mod seed;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
pub use model::{Action, ActionMask, Request};
pub use scalar::Scalar;

/// Simulation constants in double precision.
pub type Params = model::SimParams<f64>;
/// Server state in double precision.
pub type State = model::ServerState<f64>;
/// Q network used for training and evaluation runs.
pub type QNet = neural::QNetwork<f32>;
/// Double-precision Q network, used for gradient checks.
pub type QNet64 = neural::QNetwork<f64>;
/// Double deep-Q agent with single-precision networks.
pub type Agent = agent::NafaAgent<f32>;
