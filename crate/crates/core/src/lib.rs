//! Variance-dependent regret minimization for tabular episodic MDPs.
//!
//! The crate provides
//!
//! * [`mdp`]: the MDP model, exact planning oracles and simulation;
//! * [`variance`]: per-step, per-trajectory and policy-value variances;
//! * [`mvpv`]: model-based optimistic planning with Bernstein bonuses;
//! * [`ucbadv`]: model-free stage-based Q-learning with a reference-advantage
//!   decomposition;
//! * [`envs`]: counterexample, lower-bound and random MDP constructors plus
//!   reward normalization and homogenization;
//! * [`harness`]: the K-episode experiment driver and regret scaling fits.

pub mod agent;
pub mod envs;
pub mod harness;
pub mod iota;
pub mod mdp;
pub mod mvpv;
pub mod rng;
pub mod ucbadv;
pub mod variance;

pub use agent::{Agent, EpisodeRunner, InvariantCounts};
pub use mdp::{
    dist_variance, max_support, policy_evaluation, simulate_episode, value_iteration, ExperimentRecord, MdpBuilder,
    MdpError, MdpSpec, PlanningSolution, Policy, RewardDist, Trajectory,
};
pub use mvpv::{HoeffdingBaseline, MvpvAgent, MvpvConfig};
pub use ucbadv::{UcbAdvAgent, UcbAdvConfig};
