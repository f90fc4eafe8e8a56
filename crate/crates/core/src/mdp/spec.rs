use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MdpError;

/// Rows must sum to one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Slack allowed on the bounded-total-reward claim.
pub const TOTAL_REWARD_TOL: f64 = 1e-9;

/// A reward distribution supported on `[0, 1]`.
///
/// `Bernoulli` carries an optional `scale`: the reward is `scale` with
/// probability `p` and `0` otherwise. Plain Bernoulli rewards have
/// `scale = 1`, which is also the serialized default.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RewardDist {
    #[serde(rename = "det")]
    Deterministic { v: f64 },
    #[serde(rename = "bern")]
    Bernoulli {
        p: f64,
        #[serde(default = "unit_scale", skip_serializing_if = "is_unit_scale")]
        scale: f64,
    },
}

fn unit_scale() -> f64 {
    1.0
}

fn is_unit_scale(scale: &f64) -> bool {
    *scale == 1.0
}

impl RewardDist {
    pub fn det(v: f64) -> Self {
        RewardDist::Deterministic { v }
    }

    pub fn bern(p: f64) -> Self {
        RewardDist::Bernoulli { p, scale: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            RewardDist::Deterministic { v } => v,
            RewardDist::Bernoulli { p, scale } => p * scale,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            RewardDist::Deterministic { .. } => 0.0,
            RewardDist::Bernoulli { p, scale } => scale * scale * p * (1.0 - p),
        }
    }

    /// Largest value in the support.
    pub fn sup(&self) -> f64 {
        match *self {
            RewardDist::Deterministic { v } => v,
            RewardDist::Bernoulli { p, scale } => {
                if p > 0.0 {
                    scale
                } else {
                    0.0
                }
            }
        }
    }

    /// Multiplies every outcome by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            RewardDist::Deterministic { v } => RewardDist::Deterministic { v: v * factor },
            RewardDist::Bernoulli { p, scale } => RewardDist::Bernoulli {
                p,
                scale: scale * factor,
            },
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RewardDist::Deterministic { v } => v,
            RewardDist::Bernoulli { p, scale } => {
                if rng.random::<f64>() < p {
                    scale
                } else {
                    0.0
                }
            }
        }
    }

    fn check(&self) -> Result<(), String> {
        let in_unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        match *self {
            RewardDist::Deterministic { v } if !in_unit(v) => {
                Err(format!("deterministic reward {v} outside [0, 1]"))
            }
            RewardDist::Bernoulli { p, .. } if !in_unit(p) => {
                Err(format!("bernoulli parameter {p} outside [0, 1]"))
            }
            RewardDist::Bernoulli { scale, .. } if !in_unit(scale) => {
                Err(format!("bernoulli scale {scale} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// A validated tabular finite-horizon MDP.
///
/// Time-homogeneous MDPs store a single `(s, a)` table which every step
/// aliases; inhomogeneous ones store one table per step. Steps are
/// 0-based throughout the crate: `h` ranges over `0..horizon`.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpSpec {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    homogeneous: bool,
    deterministic: bool,
    bounded_total_reward: bool,
    transitions: Vec<f64>,
    rewards: Vec<RewardDist>,
    initial_state: Vec<f64>,
}

impl MdpSpec {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn has_bounded_total_reward(&self) -> bool {
        self.bounded_total_reward
    }

    pub fn num_layers(&self) -> usize {
        if self.homogeneous {
            1
        } else {
            self.horizon
        }
    }

    /// Storage layer used at step `h`.
    #[inline]
    pub fn layer(&self, h: usize) -> usize {
        if self.homogeneous {
            0
        } else {
            h
        }
    }

    #[inline]
    fn pair_index(&self, layer: usize, s: usize, a: usize) -> usize {
        (layer * self.num_states + s) * self.num_actions + a
    }

    /// `P_h(· | s, a)`.
    #[inline]
    pub fn transition(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.pair_index(self.layer(h), s, a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> &RewardDist {
        &self.rewards[self.pair_index(self.layer(h), s, a)]
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    /// States with positive initial probability.
    pub fn start_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.initial_state
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, _)| s)
    }

    /// Largest total reward any trajectory can collect, taking every reward
    /// at its supremum and following only positive-probability transitions.
    pub fn max_total_reward(&self) -> f64 {
        let (s_count, a_count) = (self.num_states, self.num_actions);
        let mut next = vec![0.0; s_count];
        for h in (0..self.horizon).rev() {
            let mut cur = vec![0.0; s_count];
            for (s, slot) in cur.iter_mut().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for a in 0..a_count {
                    let future = self
                        .transition(h, s, a)
                        .iter()
                        .zip(&next)
                        .filter(|(&p, _)| p > 0.0)
                        .map(|(_, &v)| v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    best = best.max(self.reward(h, s, a).sup() + future);
                }
                *slot = best;
            }
            next = cur;
        }
        next.into_iter().fold(0.0, f64::max)
    }

    /// Samples `s_1`.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial_state, rng)
    }

    #[inline]
    pub fn sample_next<R: Rng + ?Sized>(&self, h: usize, s: usize, a: usize, rng: &mut R) -> usize {
        sample_categorical(self.transition(h, s, a), rng)
    }

    pub(crate) fn raw_transitions(&self) -> &[f64] {
        &self.transitions
    }
}

/// Draws an index from a validated probability vector. Always consumes
/// exactly one uniform variate.
#[inline]
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Incremental construction of an [`MdpSpec`]. Unset pairs default to an
/// absorbing self-loop with zero reward; everything is validated by
/// [`MdpBuilder::build`].
#[derive(Clone, Debug)]
pub struct MdpBuilder {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    homogeneous: bool,
    deterministic: bool,
    bounded_total_reward: bool,
    transitions: Vec<f64>,
    rewards: Vec<RewardDist>,
    initial_state: Vec<f64>,
}

impl MdpBuilder {
    pub fn homogeneous(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        Self::with_layout(num_states, num_actions, horizon, true)
    }

    pub fn inhomogeneous(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        Self::with_layout(num_states, num_actions, horizon, false)
    }

    fn with_layout(num_states: usize, num_actions: usize, horizon: usize, homogeneous: bool) -> Self {
        let layers = if homogeneous { 1 } else { horizon };
        let mut transitions = vec![0.0; layers * num_states * num_actions * num_states];
        for layer in 0..layers {
            for s in 0..num_states {
                for a in 0..num_actions {
                    let idx = ((layer * num_states + s) * num_actions + a) * num_states + s;
                    transitions[idx] = 1.0;
                }
            }
        }
        let mut initial_state = vec![0.0; num_states];
        if let Some(first) = initial_state.first_mut() {
            *first = 1.0;
        }
        MdpBuilder {
            num_states,
            num_actions,
            horizon,
            homogeneous,
            deterministic: false,
            bounded_total_reward: false,
            transitions,
            rewards: vec![RewardDist::det(0.0); layers * num_states * num_actions],
            initial_state,
        }
    }

    pub fn num_layers(&self) -> usize {
        if self.homogeneous {
            1
        } else {
            self.horizon
        }
    }

    fn pair_index(&self, layer: usize, s: usize, a: usize) -> usize {
        assert!(layer < self.num_layers(), "layer {layer} out of range");
        assert!(s < self.num_states && a < self.num_actions, "pair ({s}, {a}) out of range");
        (layer * self.num_states + s) * self.num_actions + a
    }

    /// Sets `P(· | s, a)` in `layer`. Panics if `row` has the wrong length.
    pub fn transition(&mut self, layer: usize, s: usize, a: usize, row: &[f64]) -> &mut Self {
        assert_eq!(row.len(), self.num_states, "transition row length");
        let start = self.pair_index(layer, s, a) * self.num_states;
        self.transitions[start..start + self.num_states].copy_from_slice(row);
        self
    }

    /// Sets a point-mass transition `(s, a) -> to`.
    pub fn goto(&mut self, layer: usize, s: usize, a: usize, to: usize) -> &mut Self {
        let mut row = vec![0.0; self.num_states];
        row[to] = 1.0;
        self.transition(layer, s, a, &row)
    }

    pub fn reward(&mut self, layer: usize, s: usize, a: usize, dist: RewardDist) -> &mut Self {
        let idx = self.pair_index(layer, s, a);
        self.rewards[idx] = dist;
        self
    }

    pub fn initial_state(&mut self, dist: &[f64]) -> &mut Self {
        self.initial_state = dist.to_vec();
        self
    }

    pub fn deterministic(&mut self, flag: bool) -> &mut Self {
        self.deterministic = flag;
        self
    }

    pub fn bounded_total_reward(&mut self, flag: bool) -> &mut Self {
        self.bounded_total_reward = flag;
        self
    }

    pub fn build(&self) -> Result<MdpSpec, MdpError> {
        let (s_count, a_count) = (self.num_states, self.num_actions);
        if s_count == 0 || a_count == 0 || self.horizon == 0 {
            return Err(MdpError::DimensionMismatch(format!(
                "S, A, H must be positive (got {s_count}, {a_count}, {})",
                self.horizon
            )));
        }
        let layers = self.num_layers();
        for layer in 0..layers {
            for s in 0..s_count {
                for a in 0..a_count {
                    let pair = (layer * s_count + s) * a_count + a;
                    let row = &self.transitions[pair * s_count..(pair + 1) * s_count];
                    check_probability_row(row).map_err(|reason| MdpError::InvalidTransition {
                        layer,
                        state: s,
                        action: a,
                        reason,
                    })?;
                    let reward = &self.rewards[pair];
                    reward.check().map_err(|reason| MdpError::InvalidReward {
                        layer,
                        state: s,
                        action: a,
                        reason,
                    })?;
                    if self.deterministic {
                        let point_mass = row.iter().filter(|&&p| p > 0.0).count() == 1;
                        let det_reward = matches!(reward, RewardDist::Deterministic { .. });
                        if !point_mass || !det_reward {
                            return Err(MdpError::NotDeterministic {
                                layer,
                                state: s,
                                action: a,
                            });
                        }
                    }
                }
            }
        }
        if self.initial_state.len() != s_count {
            return Err(MdpError::InvalidInitial(format!(
                "expected {s_count} entries, got {}",
                self.initial_state.len()
            )));
        }
        check_probability_row(&self.initial_state).map_err(MdpError::InvalidInitial)?;

        let spec = MdpSpec {
            num_states: s_count,
            num_actions: a_count,
            horizon: self.horizon,
            homogeneous: self.homogeneous,
            deterministic: self.deterministic,
            bounded_total_reward: self.bounded_total_reward,
            transitions: self.transitions.clone(),
            rewards: self.rewards.clone(),
            initial_state: self.initial_state.clone(),
        };
        if spec.bounded_total_reward {
            let max_total = spec.max_total_reward();
            if max_total > 1.0 + TOTAL_REWARD_TOL {
                return Err(MdpError::TotalRewardExceeded(max_total));
            }
        }
        Ok(spec)
    }
}

impl From<&MdpSpec> for MdpBuilder {
    fn from(spec: &MdpSpec) -> Self {
        MdpBuilder {
            num_states: spec.num_states,
            num_actions: spec.num_actions,
            horizon: spec.horizon,
            homogeneous: spec.homogeneous,
            deterministic: spec.deterministic,
            bounded_total_reward: spec.bounded_total_reward,
            transitions: spec.transitions.clone(),
            rewards: spec.rewards.clone(),
            initial_state: spec.initial_state.clone(),
        }
    }
}

fn check_probability_row(row: &[f64]) -> Result<(), String> {
    if let Some(bad) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("entry {bad} is negative or not finite"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(format!("row sums to {sum}"));
    }
    Ok(())
}

/// A history-independent deterministic policy `π_h(s)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Policy {
    horizon: usize,
    num_states: usize,
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(horizon: usize, num_states: usize, actions: Vec<usize>) -> Result<Self, MdpError> {
        if actions.len() != horizon * num_states {
            return Err(MdpError::DimensionMismatch(format!(
                "policy needs {} actions, got {}",
                horizon * num_states,
                actions.len()
            )));
        }
        Ok(Policy {
            horizon,
            num_states,
            actions,
        })
    }

    pub fn constant(horizon: usize, num_states: usize, action: usize) -> Self {
        Policy {
            horizon,
            num_states,
            actions: vec![action; horizon * num_states],
        }
    }

    pub fn from_fn(horizon: usize, num_states: usize, mut f: impl FnMut(usize, usize) -> usize) -> Self {
        let mut actions = Vec::with_capacity(horizon * num_states);
        for h in 0..horizon {
            for s in 0..num_states {
                actions.push(f(h, s));
            }
        }
        Policy {
            horizon,
            num_states,
            actions,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.num_states + s]
    }

    pub fn set(&mut self, h: usize, s: usize, a: usize) {
        self.actions[h * self.num_states + s] = a;
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub(crate) fn check_against(&self, mdp: &MdpSpec) -> Result<(), MdpError> {
        if self.horizon != mdp.horizon() || self.num_states != mdp.num_states() {
            return Err(MdpError::DimensionMismatch(format!(
                "policy is {}x{}, mdp is H={} S={}",
                self.horizon,
                self.num_states,
                mdp.horizon(),
                mdp.num_states()
            )));
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= mdp.num_actions()) {
            return Err(MdpError::ActionOutOfRange {
                action: a,
                num_actions: mdp.num_actions(),
            });
        }
        Ok(())
    }
}

/// Largest support size of any transition row, Γ.
pub fn max_support(mdp: &MdpSpec) -> usize {
    mdp.raw_transitions()
        .chunks(mdp.num_states())
        .map(|row| row.iter().filter(|&&p| p > 0.0).count())
        .max()
        .unwrap_or(0)
}
