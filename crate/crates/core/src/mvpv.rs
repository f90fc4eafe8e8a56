//! MVP-V: model-based optimistic planning with doubling-trigger model
//! refreshes and variance-dependent Bernstein bonuses.
//!
//! Counts are pooled over steps, so the MDP must be time-homogeneous and
//! satisfy the bounded-total-reward condition. Inhomogeneous MDPs go through
//! [`crate::envs::homogenize`] first.

use std::marker::PhantomData;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::agent::{moment_variance, Agent, ConfigError, Dims, EpisodeUpdates};
use crate::iota::IotaMode;
use crate::mdp::{dot, variance_under, MdpSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvpvConfig {
    pub iota_mode: IotaMode,
    pub delta: f64,
}

impl Default for MvpvConfig {
    fn default() -> Self {
        MvpvConfig {
            iota_mode: IotaMode::default(),
            delta: 0.1,
        }
    }
}

/// Exploration bonus as a function of the snapshot statistics.
pub trait BonusRule {
    const NAME: &'static str;
    fn bonus(var_next: f64, var_reward: f64, iota: f64, m: f64) -> f64;
}

/// `4√(V(P̂,V)ι/m) + 2√(VarR̂·ι/m) + 21ι/m`.
#[derive(Clone, Copy, Debug)]
pub struct Bernstein;

impl BonusRule for Bernstein {
    const NAME: &'static str = "mvpv";
    fn bonus(var_next: f64, var_reward: f64, iota: f64, m: f64) -> f64 {
        4.0 * (var_next * iota / m).sqrt() + 2.0 * (var_reward * iota / m).sqrt() + 21.0 * iota / m
    }
}

/// `√(ι/m)`, blind to the observed variances.
#[derive(Clone, Copy, Debug)]
pub struct Hoeffding;

impl BonusRule for Hoeffding {
    const NAME: &'static str = "hoeffding-baseline";
    fn bonus(_: f64, _: f64, iota: f64, m: f64) -> f64 {
        (iota / m).sqrt()
    }
}

pub type MvpvAgent = Mvpv<Bernstein>;
pub type HoeffdingBaseline = Mvpv<Hoeffding>;

/// `N` belongs to `{2^(i−1) : 2^i ≤ KH}`.
pub fn is_trigger(n: u64, kh: u128) -> bool {
    n.is_power_of_two() && 2 * n as u128 <= kh
}

pub fn trigger_set(kh: u128) -> Vec<u64> {
    (0..64).map(|i| 1u64 << i).take_while(|&n| is_trigger(n, kh)).collect()
}

#[derive(Clone, Debug)]
pub struct Mvpv<B> {
    dims: Dims,
    kh: u128,
    iota: f64,
    // running statistics per pair `s·A + a`
    visits: Vec<u64>,
    reward_sum: Vec<f64>,
    reward_sq_sum: Vec<f64>,
    next_counts: Vec<u64>,
    // snapshot, refreshed on trigger
    n: Vec<u64>,
    r_hat: Vec<f64>,
    var_r_hat: Vec<f64>,
    p_hat: Vec<f64>,
    q: Array3<f64>,
    v: Array2<f64>,
    triggered: bool,
    triggers: u64,
    triggers_this_episode: u64,
    per_pair_triggers: Vec<u32>,
    _rule: PhantomData<B>,
}

impl<B: BonusRule> Mvpv<B> {
    pub fn new(dims: Dims, episodes: usize, config: &MvpvConfig) -> Result<Self, ConfigError> {
        if episodes == 0 {
            return Err(ConfigError("K must be at least 1".into()));
        }
        if dims.states == 0 || dims.actions == 0 || dims.horizon == 0 {
            return Err(ConfigError(format!("empty dimensions {dims:?}")));
        }
        let iota = if let IotaMode::Fixed { value } = config.iota_mode {
            value
        } else {
            if !(config.delta > 0.0 && config.delta < 1.0) {
                return Err(ConfigError(format!("delta must lie in (0, 1), got {}", config.delta)));
            }
            config.iota_mode.model_based(dims, episodes, config.delta)
        };
        if !(iota.is_finite() && iota >= 0.0) {
            return Err(ConfigError(format!("iota must be finite and non-negative, got {iota}")));
        }
        let (s, a, h) = (dims.states, dims.actions, dims.horizon);
        let mut v = Array2::ones((h + 1, s));
        v.row_mut(h).fill(0.0);
        Ok(Mvpv {
            dims,
            kh: episodes as u128 * h as u128,
            iota,
            visits: vec![0; s * a],
            reward_sum: vec![0.0; s * a],
            reward_sq_sum: vec![0.0; s * a],
            next_counts: vec![0; s * a * s],
            n: vec![0; s * a],
            r_hat: vec![0.0; s * a],
            var_r_hat: vec![0.0; s * a],
            p_hat: vec![0.0; s * a * s],
            q: Array3::ones((h, s, a)),
            v,
            triggered: false,
            triggers: 0,
            triggers_this_episode: 0,
            per_pair_triggers: vec![0; s * a],
            _rule: PhantomData,
        })
    }

    /// Like [`Mvpv::new`] but refuses MDPs outside the algorithm's
    /// assumptions.
    pub fn for_mdp(mdp: &MdpSpec, episodes: usize, config: &MvpvConfig) -> Result<Self, ConfigError> {
        if !mdp.is_homogeneous() {
            return Err(ConfigError("mvpv needs a time-homogeneous mdp; homogenize it first".into()));
        }
        if !mdp.has_bounded_total_reward() {
            return Err(ConfigError(
                "mvpv needs the bounded-total-reward flag; normalize rewards first".into(),
            ));
        }
        Self::new(Dims::of(mdp), episodes, config)
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    pub fn triggered(&self) -> bool {
        self.triggered
    }

    /// `V_h(s)`, shape `(H + 1, S)`.
    pub fn v_table(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn visits(&self, s: usize, a: usize) -> u64 {
        self.visits[self.pair(s, a)]
    }

    pub fn snapshot_count(&self, s: usize, a: usize) -> u64 {
        self.n[self.pair(s, a)]
    }

    pub fn r_hat(&self, s: usize, a: usize) -> f64 {
        self.r_hat[self.pair(s, a)]
    }

    pub fn var_r_hat(&self, s: usize, a: usize) -> f64 {
        self.var_r_hat[self.pair(s, a)]
    }

    pub fn p_hat(&self, s: usize, a: usize) -> &[f64] {
        let start = self.pair(s, a) * self.dims.states;
        &self.p_hat[start..start + self.dims.states]
    }

    /// Snapshot refreshes per pair over the run so far.
    pub fn triggers_per_pair(&self) -> &[u32] {
        &self.per_pair_triggers
    }

    /// Overwrites the Q table (and the V table derived from it).
    pub fn preload(&mut self, q: &Array3<f64>) {
        assert_eq!(q.dim(), self.q.dim(), "q table shape");
        self.q.assign(q);
        for h in 0..self.dims.horizon {
            for s in 0..self.dims.states {
                self.v[[h, s]] = self.q.slice(ndarray::s![h, s, ..]).iter().copied().fold(f64::MIN, f64::max);
            }
        }
    }

    #[inline]
    fn pair(&self, s: usize, a: usize) -> usize {
        s * self.dims.actions + a
    }

    /// Accumulates one transition; returns whether the snapshot refreshed.
    pub fn record(&mut self, s: usize, a: usize, r: f64, s_next: usize) -> bool {
        let p = self.pair(s, a);
        let states = self.dims.states;
        self.visits[p] += 1;
        self.reward_sum[p] += r;
        self.reward_sq_sum[p] += r * r;
        self.next_counts[p * states + s_next] += 1;
        let n = self.visits[p];
        if !is_trigger(n, self.kh) {
            return false;
        }
        let nf = n as f64;
        self.n[p] = n;
        self.r_hat[p] = self.reward_sum[p] / nf;
        self.var_r_hat[p] = moment_variance(self.reward_sq_sum[p], self.reward_sum[p], nf, 1.0);
        let row = p * states;
        for j in 0..states {
            self.p_hat[row + j] = self.next_counts[row + j] as f64 / nf;
        }
        self.per_pair_triggers[p] += 1;
        self.triggers += 1;
        self.triggers_this_episode += 1;
        self.triggered = true;
        true
    }

    /// Backward sweep from the snapshot. Returns the largest bonus among
    /// pairs with at least one snapshot sample (0 if none).
    pub fn replan(&mut self) -> f64 {
        let Dims {
            states,
            actions,
            horizon,
        } = self.dims;
        let mut max_bonus: f64 = 0.0;
        let mut next = vec![0.0; states];
        for h in (0..horizon).rev() {
            next.iter_mut().zip(self.v.row(h + 1)).for_each(|(d, v)| *d = *v);
            for s in 0..states {
                let mut best = f64::MIN;
                for a in 0..actions {
                    let p = s * actions + a;
                    let row = &self.p_hat[p * states..(p + 1) * states];
                    let m = self.n[p].max(1) as f64;
                    let b = B::bonus(variance_under(row, &next), self.var_r_hat[p], self.iota, m);
                    if self.n[p] > 0 {
                        max_bonus = max_bonus.max(b);
                    }
                    let q = (self.r_hat[p] + dot(row, &next) + b).min(1.0);
                    self.q[[h, s, a]] = q;
                    best = best.max(q);
                }
                self.v[[h, s]] = best;
            }
        }
        self.triggered = false;
        max_bonus
    }
}

impl<B: BonusRule> Agent for Mvpv<B> {
    fn name(&self) -> &'static str {
        B::NAME
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn q_table(&self) -> &Array3<f64> {
        &self.q
    }

    fn observe(&mut self, _h: usize, s: usize, a: usize, r: f64, s_next: usize) {
        self.record(s, a, r, s_next);
    }

    fn end_episode(&mut self) -> EpisodeUpdates {
        let max_bonus = if self.triggered { self.replan() } else { 0.0 };
        let updates = std::mem::take(&mut self.triggers_this_episode);
        EpisodeUpdates { updates, max_bonus }
    }

    fn trigger_count(&self) -> u64 {
        self.triggers
    }
}
