use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::planning::evaluate_unchecked;
use super::{MdpError, MdpSpec, PlanningSolution, Policy};

/// One `(s_h, a_h, r_h, s_{h+1})` transition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// A full episode of exactly `H` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode: usize,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn initial_state(&self) -> usize {
        self.steps[0].state
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn visits(&self, state: usize) -> bool {
        self.steps.iter().any(|s| s.state == state)
    }
}

/// Plays one episode, asking `action_source(h, s)` for each action.
///
/// Randomness is drawn in a fixed order (initial state, then reward and
/// next state per step), so equal seeds and equal actions reproduce the
/// trajectory bit for bit.
pub fn simulate_episode<R, F>(
    mdp: &MdpSpec,
    mut action_source: F,
    rng: &mut R,
    episode: usize,
) -> Result<Trajectory, MdpError>
where
    R: Rng + ?Sized,
    F: FnMut(usize, usize) -> usize,
{
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut state = mdp.sample_initial(rng);
    for h in 0..mdp.horizon() {
        let action = action_source(h, state);
        if action >= mdp.num_actions() {
            return Err(MdpError::ActionOutOfRange {
                action,
                num_actions: mdp.num_actions(),
            });
        }
        let reward = mdp.reward(h, state, action).sample(rng);
        let next_state = mdp.sample_next(h, state, action, rng);
        steps.push(Step {
            state,
            action,
            reward,
            next_state,
        });
        state = next_state;
    }
    Ok(Trajectory { episode, steps })
}

/// Computes `V*_1(s_1) − V^π_1(s_1)` for deployed policies, re-running
/// policy evaluation only when the policy changes between calls.
#[derive(Debug, Default)]
pub struct RegretTracker {
    cached: Option<(Policy, Array2<f64>)>,
    evaluations: u64,
}

impl RegretTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of exact policy evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn episode_regret(
        &mut self,
        mdp: &MdpSpec,
        plan: &PlanningSolution,
        policy: &Policy,
        initial_state: usize,
    ) -> f64 {
        let stale = match &self.cached {
            Some((cached, _)) => cached != policy,
            None => true,
        };
        if stale {
            let values = evaluate_unchecked(mdp, policy);
            self.evaluations += 1;
            self.cached = Some((policy.clone(), values));
        }
        let (_, values) = self.cached.as_ref().unwrap();
        plan.v_star[[0, initial_state]] - values[[0, initial_state]]
    }
}

/// Per-episode log row. Field order is the CSV column order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub episode: usize,
    pub episode_regret: f64,
    pub cumulative_regret: f64,
    pub var_sigma_k: f64,
    /// Cumulative number of model or stage updates the agent has fired.
    pub trigger_count: u64,
    /// Largest bonus computed by updates during this episode, 0 if none.
    pub max_bonus: f64,
}

pub const CSV_HEADER: &str = "episode,episode_regret,cumulative_regret,var_sigma_k,trigger_count,max_bonus";
