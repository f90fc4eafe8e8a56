//! UCB-Advantage-V: model-free stage-based Q-learning with a
//! reference-advantage decomposition and capped-doubling reference updates.
//!
//! Works on arbitrary (time-inhomogeneous) MDPs with per-step rewards in
//! `[0, 1]`. Every table lives at scale `H`.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::agent::{moment_variance, Agent, ConfigError, Dims, EpisodeUpdates};
use crate::iota::{default_i_star, IotaMode};

/// How the reference-trigger thresholds are scaled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RefTriggerScale {
    /// Thresholds exactly as derived, unreachable at desk scale.
    #[default]
    Theorem,
    /// Scaled so that the first threshold lands near `K/10` visits.
    Auto,
    /// Every threshold multiplied by `rho`.
    Factor { rho: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UcbAdvConfig {
    pub iota_mode: IotaMode,
    pub delta: f64,
    /// Number of reference updates per `(h, s)`; derived from `K` when unset.
    pub i_star: Option<u32>,
    pub ref_trigger_scale: RefTriggerScale,
}

impl Default for UcbAdvConfig {
    fn default() -> Self {
        UcbAdvConfig {
            iota_mode: IotaMode::default(),
            delta: 0.1,
            i_star: None,
            ref_trigger_scale: RefTriggerScale::Theorem,
        }
    }
}

/// Stage lengths `e_1 = H`, `e_{i+1} = ⌊(1 + 1/H) e_i⌋` and their prefix
/// sums, as long as the prefix sum does not exceed `limit`.
pub fn stage_lengths(horizon: usize, limit: u64) -> (Vec<u64>, Vec<u64>) {
    assert!(horizon >= 1, "horizon must be positive");
    let h = horizon as u64;
    let (mut lengths, mut ends) = (Vec::new(), Vec::new());
    let (mut e, mut total) = (h, 0u64);
    while let Some(next) = total.checked_add(e) {
        if next > limit {
            break;
        }
        total = next;
        lengths.push(e);
        ends.push(total);
        // ⌊(1 + 1/H) e⌋ in integers
        e += e / h;
    }
    (lengths, ends)
}

/// `{60000 · 4^i · S·A·H³·ι : i = 1..=i*}`, each multiplied by `rho`.
pub fn reference_triggers(dims: Dims, iota: f64, i_star: u32, rho: f64) -> Vec<f64> {
    let base = rho * 60000.0 * dims.states as f64 * dims.actions as f64 * (dims.horizon as f64).powi(3) * iota;
    (1..=i_star).map(|i| base * 4f64.powi(i as i32)).collect()
}

/// Which candidate the stage update kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// `r̂ + υ̌/ň + b̄`.
    Simple,
    /// `r̂ + μ^ref/n + μ̌/ň + b`.
    Reference,
    /// The previous `Q`.
    Kept,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageUpdate {
    pub visits: u64,
    pub stage_visits: u64,
    pub bonus_simple: f64,
    pub bonus_reference: f64,
    pub previous: f64,
    pub updated: f64,
    pub branch: Branch,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepEvents {
    pub stage: Option<StageUpdate>,
    pub reference_updated: bool,
}

#[derive(Clone, Copy, Debug, Default)]
struct Accumulators {
    n: u64,
    n_stage: u64,
    reward: f64,
    reward_sq: f64,
    next_value: f64,
    advantage: f64,
    advantage_sq: f64,
    reference: f64,
    reference_sq: f64,
}

#[derive(Clone, Debug)]
pub struct UcbAdvAgent {
    dims: Dims,
    iota: f64,
    i_star: u32,
    stage_ends: Vec<u64>,
    ref_thresholds: Vec<f64>,
    ref_counts: Vec<u64>,
    acc: Vec<Accumulators>,
    q: Array3<f64>,
    v: Array2<f64>,
    v_ref: Array2<f64>,
    state_visits: Array2<u64>,
    ref_updates: Array2<u32>,
    learning: bool,
    stage_updates: u64,
    branch_counts: [u64; 3],
    episode_updates: u64,
    episode_max_bonus: f64,
}

impl UcbAdvAgent {
    pub fn new(dims: Dims, episodes: usize, config: &UcbAdvConfig) -> Result<Self, ConfigError> {
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
            config.iota_mode.model_free(dims, episodes, config.delta)
        };
        if !(iota.is_finite() && iota >= 0.0) {
            return Err(ConfigError(format!("iota must be finite and non-negative, got {iota}")));
        }
        let i_star = match config.i_star {
            Some(0) => return Err(ConfigError("i_star must be at least 1".into())),
            Some(i) => i,
            None => default_i_star(dims, episodes, iota),
        };
        let unit = reference_triggers(dims, iota, 1, 1.0)[0];
        let rho = match config.ref_trigger_scale {
            RefTriggerScale::Theorem => 1.0,
            RefTriggerScale::Auto => (episodes as f64 / 10.0).max(1.0) / unit,
            RefTriggerScale::Factor { rho } => rho,
        };
        if !(rho.is_finite() && rho > 0.0) {
            return Err(ConfigError(format!("reference trigger scale must be positive, got {rho}")));
        }
        let ref_thresholds = reference_triggers(dims, iota, i_star, rho);
        // Thresholds are real; the count crosses one exactly at its ceiling.
        let mut ref_counts: Vec<u64> = ref_thresholds
            .iter()
            .filter(|t| **t < u64::MAX as f64)
            .map(|t| (t.ceil() as u64).max(1))
            .collect();
        ref_counts.dedup();
        let (_, stage_ends) = stage_lengths(dims.horizon, episodes as u64);
        let (s, a, h) = (dims.states, dims.actions, dims.horizon);
        let hf = h as f64;
        let mut v = Array2::from_elem((h + 1, s), hf);
        v.row_mut(h).fill(0.0);
        Ok(UcbAdvAgent {
            dims,
            iota,
            i_star,
            stage_ends,
            ref_thresholds,
            ref_counts,
            acc: vec![Accumulators::default(); h * s * a],
            q: Array3::from_elem((h, s, a), hf),
            v_ref: v.clone(),
            v,
            state_visits: Array2::zeros((h, s)),
            ref_updates: Array2::zeros((h, s)),
            learning: true,
            stage_updates: 0,
            branch_counts: [0; 3],
            episode_updates: 0,
            episode_max_bonus: 0.0,
        })
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    pub fn i_star(&self) -> u32 {
        self.i_star
    }

    pub fn stage_ends(&self) -> &[u64] {
        &self.stage_ends
    }

    pub fn reference_thresholds(&self) -> &[f64] {
        &self.ref_thresholds
    }

    pub fn v_table(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn v_ref_table(&self) -> &Array2<f64> {
        &self.v_ref
    }

    pub fn visits(&self, h: usize, s: usize, a: usize) -> u64 {
        self.acc[self.index(h, s, a)].n
    }

    pub fn stage_visits(&self, h: usize, s: usize, a: usize) -> u64 {
        self.acc[self.index(h, s, a)].n_stage
    }

    /// Reference refreshes per `(h, s)` so far.
    pub fn reference_updates(&self) -> &Array2<u32> {
        &self.ref_updates
    }

    /// How often each branch won a stage update: simple, reference, kept.
    pub fn branch_counts(&self) -> [u64; 3] {
        self.branch_counts
    }

    /// With learning off, observations are ignored entirely.
    pub fn set_learning(&mut self, on: bool) {
        self.learning = on;
    }

    pub fn preload(&mut self, q: &Array3<f64>) {
        assert_eq!(q.dim(), self.q.dim(), "q table shape");
        self.q.assign(q);
        for h in 0..self.dims.horizon {
            for s in 0..self.dims.states {
                self.v[[h, s]] = self.max_q(h, s);
            }
        }
    }

    #[inline]
    fn index(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.dims.states + s) * self.dims.actions + a
    }

    fn max_q(&self, h: usize, s: usize) -> f64 {
        (0..self.dims.actions).map(|a| self.q[[h, s, a]]).fold(f64::MIN, f64::max)
    }

    /// One observed step, in the order accumulate, stage update, reference
    /// update.
    pub fn record(&mut self, h: usize, s: usize, a: usize, r: f64, s_next: usize) -> StepEvents {
        let mut events = StepEvents::default();
        if !self.learning {
            return events;
        }
        let hf = self.dims.horizon as f64;
        let (next_v, next_ref) = (self.v[[h + 1, s_next]], self.v_ref[[h + 1, s_next]]);
        let i = self.index(h, s, a);
        let acc = &mut self.acc[i];
        acc.n += 1;
        acc.n_stage += 1;
        acc.reward += r;
        acc.reward_sq += r * r;
        acc.next_value += next_v;
        acc.advantage += next_v - next_ref;
        acc.advantage_sq += (next_v - next_ref).powi(2);
        acc.reference += next_ref;
        acc.reference_sq += next_ref * next_ref;
        self.state_visits[[h, s]] += 1;

        if self.stage_ends.binary_search(&acc.n).is_ok() {
            let acc = *acc;
            debug_assert!(acc.n_stage >= 1);
            let (n, m) = (acc.n as f64, acc.n_stage as f64);
            let iota = self.iota;
            let scale = hf * hf;
            let r_hat = acc.reward / n;
            let var_r = moment_variance(acc.reward_sq, acc.reward, n, 1.0);
            let nu_ref = moment_variance(acc.reference_sq, acc.reference, n, scale);
            let nu_adv = moment_variance(acc.advantage_sq, acc.advantage, m, scale);
            let bonus_simple = 2.0 * (scale * iota / m).sqrt();
            let bonus_reference = 4.0 * (nu_ref * iota / n).sqrt()
                + 4.0 * (nu_adv * iota / m).sqrt()
                + 2.0 * (var_r * iota / n).sqrt()
                + 90.0 * hf * iota / m;
            let simple = r_hat + acc.next_value / m + bonus_simple;
            let reference = r_hat + acc.reference / n + acc.advantage / m + bonus_reference;
            let previous = self.q[[h, s, a]];
            let (updated, branch) = if simple <= reference && simple < previous {
                (simple, Branch::Simple)
            } else if reference < simple && reference < previous {
                (reference, Branch::Reference)
            } else {
                (previous, Branch::Kept)
            };
            self.q[[h, s, a]] = updated;
            self.v[[h, s]] = self.max_q(h, s);
            let slot = &mut self.acc[i];
            slot.n_stage = 0;
            slot.next_value = 0.0;
            slot.advantage = 0.0;
            slot.advantage_sq = 0.0;

            let effective = match branch {
                Branch::Simple => bonus_simple,
                Branch::Reference => bonus_reference,
                Branch::Kept => bonus_simple.min(bonus_reference),
            };
            self.episode_max_bonus = self.episode_max_bonus.max(effective);
            self.episode_updates += 1;
            self.stage_updates += 1;
            self.branch_counts[branch as usize] += 1;
            events.stage = Some(StageUpdate {
                visits: acc.n,
                stage_visits: acc.n_stage,
                bonus_simple,
                bonus_reference,
                previous,
                updated,
                branch,
            });
        }

        if self.ref_counts.binary_search(&self.state_visits[[h, s]]).is_ok() {
            self.v_ref[[h, s]] = self.v[[h, s]];
            self.ref_updates[[h, s]] += 1;
            events.reference_updated = true;
        }
        events
    }
}

impl Agent for UcbAdvAgent {
    fn name(&self) -> &'static str {
        "ucbadvv"
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn q_table(&self) -> &Array3<f64> {
        &self.q
    }

    fn observe(&mut self, h: usize, s: usize, a: usize, r: f64, s_next: usize) {
        self.record(h, s, a, r, s_next);
    }

    fn end_episode(&mut self) -> EpisodeUpdates {
        EpisodeUpdates {
            updates: std::mem::take(&mut self.episode_updates),
            max_bonus: std::mem::take(&mut self.episode_max_bonus),
        }
    }

    fn trigger_count(&self) -> u64 {
        self.stage_updates
    }

    fn is_monotone(&self) -> bool {
        true
    }
}
