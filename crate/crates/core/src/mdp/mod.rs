//! Tabular episodic MDPs: the model, exact dynamic-programming oracles,
//! episode simulation and regret accounting.

mod io;
mod planning;
mod simulate;
mod spec;

use thiserror::Error;

pub use planning::{argmax, dist_variance, policy_evaluation, value_iteration, PlanningSolution, VARIANCE_CLAMP_TOL};
pub(crate) use planning::{clamp_variance, dot, evaluate_unchecked, variance_under};
pub use simulate::{simulate_episode, ExperimentRecord, RegretTracker, Step, Trajectory, CSV_HEADER};
pub use spec::{max_support, sample_categorical, MdpBuilder, MdpSpec, Policy, RewardDist, ROW_SUM_TOL, TOTAL_REWARD_TOL};

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("transition row (layer {layer}, s={state}, a={action}) is invalid: {reason}")]
    InvalidTransition {
        layer: usize,
        state: usize,
        action: usize,
        reason: String,
    },
    #[error("reward (layer {layer}, s={state}, a={action}) is invalid: {reason}")]
    InvalidReward {
        layer: usize,
        state: usize,
        action: usize,
        reason: String,
    },
    #[error("initial state distribution is invalid: {0}")]
    InvalidInitial(String),
    #[error("flagged deterministic but (layer {layer}, s={state}, a={action}) is stochastic")]
    NotDeterministic { layer: usize, state: usize, action: usize },
    #[error("flagged as bounded total reward but a trajectory can collect {0}")]
    TotalRewardExceeded(f64),
    #[error("action {action} out of range (A = {num_actions})")]
    ActionOutOfRange { action: usize, num_actions: usize },
    #[error("malformed mdp file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
