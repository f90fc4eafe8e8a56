//! Variance quantities of an MDP: the maximum per-step conditional
//! variance, the total multi-step conditional variance of a trajectory,
//! and the maximum policy-value variance.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{evaluate_unchecked, value_iteration, variance_under, MdpError, MdpSpec, PlanningSolution, Policy, Trajectory};

/// Default cap on `A^(S·H)` for exact enumeration.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum VarianceError {
    #[error("exact enumeration needs {needed} policies, budget is {budget}")]
    BudgetExceeded { needed: f64, budget: u64 },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// `V(R_h(s,a)) + V(P_{s,a,h}, next)`.
#[inline]
pub fn step_variance(mdp: &MdpSpec, h: usize, s: usize, a: usize, next: &[f64]) -> f64 {
    mdp.reward(h, s, a).variance() + variance_under(mdp.transition(h, s, a), next)
}

/// Maximum per-step conditional variance over all `(h, s, a)` under `V*`.
pub fn q_star(mdp: &MdpSpec, plan: &PlanningSolution) -> f64 {
    let mut worst: f64 = 0.0;
    for h in 0..mdp.horizon() {
        let next = plan.v_star.row(h + 1).to_vec();
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                worst = worst.max(step_variance(mdp, h, s, a, &next));
            }
        }
    }
    worst
}

/// Sum of per-step conditional variances under `V*` along a trajectory.
pub fn var_sigma_trajectory(mdp: &MdpSpec, plan: &PlanningSolution, tau: &Trajectory) -> f64 {
    tau.steps
        .iter()
        .enumerate()
        .map(|(h, step)| {
            let next = plan.v_star.row(h + 1);
            step_variance(mdp, h, step.state, step.action, next.as_slice().unwrap())
        })
        .sum()
}

/// Return variance of a policy from every `(h, s)`.
#[derive(Clone, Debug)]
pub struct PolicyVariance {
    /// `V^π_h(s)`, shape `(H + 1, S)`.
    pub values: Array2<f64>,
    /// `Var^π_h(s)`, shape `(H + 1, S)`.
    pub variance: Array2<f64>,
    /// `max_s Var^π_1(s)` over start states (initial-distribution support).
    pub max_over_starts: f64,
    /// `max_s Var^π_1(s)` over every state.
    pub max_over_states: f64,
}

/// `Var^π_h(s) = P·Var^π_{h+1} + V(R_h(s,a)) + V(P, V^π_{h+1})` by backward
/// induction.
pub fn var_policy(mdp: &MdpSpec, policy: &Policy) -> Result<PolicyVariance, MdpError> {
    policy.check_against(mdp)?;
    Ok(var_policy_unchecked(mdp, policy))
}

fn var_policy_unchecked(mdp: &MdpSpec, policy: &Policy) -> PolicyVariance {
    let values = evaluate_unchecked(mdp, policy);
    let (h_len, s_len) = (mdp.horizon(), mdp.num_states());
    let mut variance = Array2::zeros((h_len + 1, s_len));
    for h in (0..h_len).rev() {
        let next_v = values.row(h + 1).to_vec();
        let next_var = variance.row(h + 1).to_vec();
        for s in 0..s_len {
            let a = policy.action(h, s);
            let row = mdp.transition(h, s, a);
            let carried: f64 = row.iter().zip(&next_var).map(|(p, v)| p * v).sum();
            variance[[h, s]] = carried + step_variance(mdp, h, s, a, &next_v);
        }
    }
    let first = variance.row(0);
    let max_over_starts = mdp.start_states().map(|s| first[s]).fold(0.0, f64::max);
    let max_over_states = first.iter().copied().fold(0.0, f64::max);
    PolicyVariance {
        values,
        variance,
        max_over_starts,
        max_over_states,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarStarMethod {
    ExactEnumeration,
    MonteCarloLowerBound,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VarStarMode {
    Exact { budget: u64 },
    /// Samples `policies` uniformly random deterministic policies plus the
    /// optimal one; the maximum is a lower bound on `Var*`.
    MonteCarlo { policies: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarStar {
    pub value: f64,
    pub method: VarStarMethod,
    pub policies_evaluated: u64,
}

/// Maximum policy-value variance, `max_π max_{s_1} Var^π_1(s_1)`.
pub fn var_star(mdp: &MdpSpec, mode: VarStarMode) -> Result<VarStar, VarianceError> {
    match mode {
        VarStarMode::Exact { budget } => exact_var_star(mdp, budget),
        VarStarMode::MonteCarlo { policies, seed } => Ok(sampled_var_star(mdp, policies, seed)),
    }
}

/// Exact when `A^(S·H)` fits in `budget`, otherwise the Monte-Carlo bound.
pub fn var_star_auto(mdp: &MdpSpec, budget: u64, policies: usize, seed: u64) -> VarStar {
    match exact_var_star(mdp, budget) {
        Ok(v) => v,
        Err(_) => sampled_var_star(mdp, policies, seed),
    }
}

/// Number of deterministic policies, `A^(S·H)`, as a float.
pub fn policy_count(mdp: &MdpSpec) -> f64 {
    (mdp.num_actions() as f64).powi((mdp.num_states() * mdp.horizon()) as i32)
}

fn exact_var_star(mdp: &MdpSpec, budget: u64) -> Result<VarStar, VarianceError> {
    let needed = policy_count(mdp);
    if needed > budget as f64 {
        return Err(VarianceError::BudgetExceeded { needed, budget });
    }
    let count = needed as u64;
    let (h_len, s_len, a_len) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let value = (0..count)
        .into_par_iter()
        .map(|mut code| {
            let policy = Policy::from_fn(h_len, s_len, |_, _| {
                let a = (code % a_len as u64) as usize;
                code /= a_len as u64;
                a
            });
            var_policy_unchecked(mdp, &policy).max_over_starts
        })
        .reduce(|| 0.0, f64::max);
    Ok(VarStar {
        value,
        method: VarStarMethod::ExactEnumeration,
        policies_evaluated: count,
    })
}

fn sampled_var_star(mdp: &MdpSpec, policies: usize, seed: u64) -> VarStar {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h_len, s_len, a_len) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut candidates = vec![value_iteration(mdp).optimal_policy];
    candidates.extend((0..policies).map(|_| Policy::from_fn(h_len, s_len, |_, _| rng.random_range(0..a_len))));
    let value = candidates
        .par_iter()
        .map(|pi| var_policy_unchecked(mdp, pi).max_over_starts)
        .reduce(|| 0.0, f64::max);
    VarStar {
        value,
        method: VarStarMethod::MonteCarloLowerBound,
        policies_evaluated: candidates.len() as u64,
    }
}

/// Variance summary of one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarianceReport {
    pub q_star_max: f64,
    pub var_sigma_per_episode: Vec<f64>,
    pub var_sigma_total: f64,
    pub var_star: VarStar,
}

impl VarianceReport {
    pub fn new(q_star_max: f64, var_sigma_per_episode: Vec<f64>, var_star: VarStar) -> Self {
        let var_sigma_total = var_sigma_per_episode.iter().sum();
        VarianceReport {
            q_star_max,
            var_sigma_per_episode,
            var_sigma_total,
            var_star,
        }
    }
}
