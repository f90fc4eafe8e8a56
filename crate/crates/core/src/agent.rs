//! The uniform agent contract and the episode runner that plays an agent
//! against an MDP while doing the oracle-side regret accounting.

use ndarray::{Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{argmax, clamp_variance, ExperimentRecord, MdpError, MdpSpec, PlanningSolution, Policy, RegretTracker, Step, Trajectory};
use crate::variance::var_sigma_trajectory;

/// Tolerance for the optimism and monotonicity checks.
pub const INVARIANT_TOL: f64 = 1e-9;

/// Relative slack for variances computed from running sums, where the
/// subtraction `E[x²] − E[x]²` loses roughly `n·eps` of the scale.
pub const MOMENT_VAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid agent configuration: {0}")]
pub struct ConfigError(pub String);

/// `sq/n − (sum/n)²` clamped at 0. `scale` bounds `x²`.
#[inline]
pub(crate) fn moment_variance(sq: f64, sum: f64, n: f64, scale: f64) -> f64 {
    let mean = sum / n;
    clamp_variance(sq / n - mean * mean, MOMENT_VAR_TOL * scale.max(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn of(mdp: &MdpSpec) -> Self {
        Dims {
            states: mdp.num_states(),
            actions: mdp.num_actions(),
            horizon: mdp.horizon(),
        }
    }

    pub(crate) fn as_floats(&self, episodes: usize) -> (f64, f64, f64, f64) {
        (self.horizon as f64, self.states as f64, self.actions as f64, episodes as f64)
    }
}

/// What an agent did at an episode boundary.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpisodeUpdates {
    /// Triggers or stage updates fired during the episode.
    pub updates: u64,
    /// Largest bonus computed during the episode, 0 if none.
    pub max_bonus: f64,
}

/// An online learner. Steps `h` are 0-based.
pub trait Agent {
    fn name(&self) -> &'static str;

    fn dims(&self) -> Dims;

    /// `Q_h(s, a)` with shape `(H, S, A)`.
    fn q_table(&self) -> &Array3<f64>;

    fn observe(&mut self, h: usize, s: usize, a: usize, r: f64, s_next: usize);

    fn end_episode(&mut self) -> EpisodeUpdates;

    /// Cumulative number of triggers or stage updates.
    fn trigger_count(&self) -> u64;

    /// Whether `Q` is non-increasing by construction (checked by the runner).
    fn is_monotone(&self) -> bool {
        false
    }

    /// Greedy action, ties to the lowest index.
    fn act(&self, h: usize, s: usize) -> usize {
        argmax(self.q_table().index_axis(Axis(0), h).row(s).iter().copied())
    }

    fn greedy_policy(&self) -> Policy {
        let d = self.dims();
        Policy::from_fn(d.horizon, d.states, |h, s| self.act(h, s))
    }
}

/// Counts of checked and violated invariants over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantCounts {
    pub optimism_checked: u64,
    pub optimism_violations: u64,
    pub monotonicity_checked: u64,
    pub monotonicity_violations: u64,
}

impl InvariantCounts {
    pub fn violations(&self) -> u64 {
        self.optimism_violations + self.monotonicity_violations
    }
}

/// Plays episodes and keeps the regret books.
///
/// The greedy policy is frozen at episode start and evaluated exactly, which
/// is an oracle the agent never sees.
pub struct EpisodeRunner<'m> {
    mdp: &'m MdpSpec,
    plan: &'m PlanningSolution,
    tracker: RegretTracker,
    cumulative: f64,
    episode: usize,
    checks: bool,
    counts: InvariantCounts,
    previous_q: Option<Array3<f64>>,
}

impl<'m> EpisodeRunner<'m> {
    pub fn new(mdp: &'m MdpSpec, plan: &'m PlanningSolution) -> Self {
        EpisodeRunner {
            mdp,
            plan,
            tracker: RegretTracker::new(),
            cumulative: 0.0,
            episode: 0,
            checks: false,
            counts: InvariantCounts::default(),
            previous_q: None,
        }
    }

    /// Checks optimism (and monotonicity for monotone agents) at every
    /// episode start.
    pub fn with_checks(mut self, on: bool) -> Self {
        self.checks = on;
        self
    }

    pub fn invariant_counts(&self) -> InvariantCounts {
        self.counts
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.cumulative
    }

    pub fn episodes_played(&self) -> usize {
        self.episode
    }

    pub fn run_episode<A, R>(&mut self, agent: &mut A, rng: &mut R) -> Result<(Trajectory, ExperimentRecord), MdpError>
    where
        A: Agent + ?Sized,
        R: Rng + ?Sized,
    {
        let dims = agent.dims();
        if dims != Dims::of(self.mdp) {
            return Err(MdpError::DimensionMismatch(format!(
                "agent is {dims:?}, mdp is {:?}",
                Dims::of(self.mdp)
            )));
        }
        if self.checks {
            self.check(agent);
        }
        let policy = agent.greedy_policy();
        let mdp = self.mdp;
        let mut steps = Vec::with_capacity(mdp.horizon());
        let mut state = mdp.sample_initial(rng);
        for h in 0..mdp.horizon() {
            let action = policy.action(h, state);
            debug_assert_eq!(action, agent.act(h, state));
            let reward = mdp.reward(h, state, action).sample(rng);
            let next_state = mdp.sample_next(h, state, action, rng);
            agent.observe(h, state, action, reward, next_state);
            steps.push(Step {
                state,
                action,
                reward,
                next_state,
            });
            state = next_state;
        }
        let tau = Trajectory {
            episode: self.episode,
            steps,
        };
        let regret = self.tracker.episode_regret(mdp, self.plan, &policy, tau.initial_state());
        self.cumulative += regret;
        let var_sigma_k = var_sigma_trajectory(mdp, self.plan, &tau);
        let updates = agent.end_episode();
        let record = ExperimentRecord {
            episode: self.episode + 1,
            episode_regret: regret,
            cumulative_regret: self.cumulative,
            var_sigma_k,
            trigger_count: agent.trigger_count(),
            max_bonus: updates.max_bonus,
        };
        self.episode += 1;
        Ok((tau, record))
    }

    fn check<A: Agent + ?Sized>(&mut self, agent: &A) {
        let q = agent.q_table();
        for (mine, star) in q.iter().zip(self.plan.q_star.iter()) {
            self.counts.optimism_checked += 1;
            if *mine < star - INVARIANT_TOL {
                self.counts.optimism_violations += 1;
            }
        }
        if agent.is_monotone() {
            if let Some(prev) = &self.previous_q {
                for (now, before) in q.iter().zip(prev.iter()) {
                    self.counts.monotonicity_checked += 1;
                    if *now > before + INVARIANT_TOL {
                        self.counts.monotonicity_violations += 1;
                    }
                }
            }
            match &mut self.previous_q {
                Some(prev) => prev.assign(q),
                None => self.previous_q = Some(q.clone()),
            }
        }
    }
}
