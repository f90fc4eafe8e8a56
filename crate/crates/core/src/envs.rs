//! MDP constructors and conversions.
//!
//! Every constructor returns a validated [`MdpSpec`]. Steps are 0-based.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::mdp::{MdpBuilder, MdpError, MdpSpec, Policy, RewardDist, TOTAL_REWARD_TOL};
use crate::rng::stream;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown environment {0:?}")]
    UnknownEnv(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("bad parameter record: {0}")]
    Json(#[from] serde_json::Error),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, EnvError> {
    Err(EnvError::InvalidParams(msg.into()))
}

/// Sets the bounded-total-reward flag when the MDP earns it.
fn flag_if_bounded(builder: &mut MdpBuilder) -> Result<MdpSpec, EnvError> {
    let mdp = builder.build()?;
    if mdp.max_total_reward() <= 1.0 + TOTAL_REWARD_TOL {
        Ok(builder.bounded_total_reward(true).build()?)
    } else {
        Ok(mdp)
    }
}

/// Action 0 pays `1/H` deterministically, the others pay nothing, and every
/// transition is uniform over the states.
pub fn make_uniform_goodaction_mdp(states: usize, actions: usize, horizon: usize) -> Result<MdpSpec, EnvError> {
    if states == 0 || actions == 0 || horizon == 0 {
        return invalid("S, A and H must be positive");
    }
    let mut b = MdpBuilder::homogeneous(states, actions, horizon);
    let uniform = vec![1.0 / states as f64; states];
    for s in 0..states {
        for a in 0..actions {
            b.transition(0, s, a, &uniform);
        }
        b.reward(0, s, 0, RewardDist::det(1.0 / horizon as f64));
    }
    Ok(b.bounded_total_reward(true).build()?)
}

/// State indices of the counterexample MDP with a small `Var*`.
pub mod fig1 {
    pub const S1: usize = 0;
    pub const S2: usize = 1;
    pub const S3: usize = 2;
    pub const S4: usize = 3;
    pub const SINK: usize = 4;
}

/// `s1 → s2` with probability `p` (else an absorbing sink), `s2` splits
/// evenly into `s3` and `s4`, and the only reward, 1, is collected at `s4`.
/// One action, `H = 3`.
pub fn make_fig1_mdp(p: f64) -> Result<MdpSpec, EnvError> {
    use fig1::*;
    if !(p > 0.0 && p <= 1.0) {
        return invalid(format!("p must lie in (0, 1], got {p}"));
    }
    let mut b = MdpBuilder::homogeneous(5, 1, 3);
    let mut row = [0.0; 5];
    row[S2] = p;
    row[SINK] = 1.0 - p;
    b.transition(0, S1, 0, &row);
    let mut split = [0.0; 5];
    split[S3] = 0.5;
    split[S4] = 0.5;
    b.transition(0, S2, 0, &split);
    b.goto(0, S3, 0, SINK).goto(0, S4, 0, SINK).goto(0, SINK, 0, SINK);
    b.reward(0, S4, 0, RewardDist::det(1.0));
    Ok(b.initial_state(&one_hot(5, S1)).bounded_total_reward(true).build()?)
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HardVariant {
    /// Reward `t` once at the good state, then absorption.
    #[default]
    Homogeneous,
    /// A waiting prefix, a layer-specific better leaf action and reward
    /// `t` per step at the good state late in the episode.
    Inhomogeneous,
}

/// The leaf action with the higher chance of reaching the good state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Star {
    pub leaf: usize,
    pub action: usize,
    /// The step the leaf action must be played at (inhomogeneous only).
    #[serde(default)]
    pub step: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardInstanceParams {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "K")]
    pub episodes: usize,
    pub t: f64,
    /// Computed from `K` when absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Defaults to the last leaf and last action so ties never favor it.
    #[serde(default)]
    pub star: Option<Star>,
    #[serde(default)]
    pub variant: HardVariant,
    /// Defaults to `d + 1` (homogeneous) or `4(d + 1)` (inhomogeneous).
    #[serde(rename = "H", default)]
    pub horizon: Option<usize>,
    /// Length of the waiting prefix; defaults to `⌊H/2⌋ − d`.
    #[serde(default)]
    pub wait: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct HardInstance {
    pub mdp: MdpSpec,
    /// The same MDP without the perturbation.
    pub reference: MdpSpec,
    pub epsilon: f64,
    /// Tree depth `⌊log2(S − 2)⌋`.
    pub d: usize,
    pub leaves: usize,
    pub horizon: usize,
    pub star: Star,
    pub good_state: usize,
    pub bad_state: usize,
    /// Waiting state of the inhomogeneous variant.
    pub wait_state: Option<usize>,
    pub wait: usize,
}

impl HardInstance {
    /// Tree node index of a leaf.
    pub fn leaf_state(&self, leaf: usize) -> usize {
        (1 << (self.d - 1)) - 1 + leaf
    }
}

/// Binary-tree lower-bound instance.
///
/// States `0..2^d − 1` form a heap-ordered full binary tree rooted at 0
/// with `L = 2^(d−1)` leaves; internal nodes send action `a` to child
/// `a mod 2`. The next two states are the good and bad sinks and the one
/// after that is the waiting state (inhomogeneous) or spare. Any other
/// state is absorbing and unreachable.
pub fn make_hard_instance(params: &HardInstanceParams) -> Result<HardInstance, EnvError> {
    let &HardInstanceParams {
        states,
        actions,
        episodes,
        t,
        variant,
        ..
    } = params;
    if states < 6 {
        return invalid(format!("S must be at least 6, got {states}"));
    }
    if actions < 2 {
        return invalid(format!("A must be at least 2, got {actions}"));
    }
    if !(t > 0.0 && t <= 1.0) {
        return invalid(format!("t must lie in (0, 1], got {t}"));
    }
    if episodes == 0 {
        return invalid("K must be positive");
    }
    let d = (usize::BITS - 1 - (states - 2).leading_zeros()) as usize;
    let nodes = (1usize << d) - 1;
    let leaves = 1usize << (d - 1);
    let first_leaf = leaves - 1;
    let (good, bad, spare) = (nodes, nodes + 1, nodes + 2);
    let la = (leaves * actions) as f64;

    let horizon = params.horizon.unwrap_or(match variant {
        HardVariant::Homogeneous => d + 1,
        HardVariant::Inhomogeneous => 4 * (d + 1),
    });
    let wait = match variant {
        HardVariant::Homogeneous => 0,
        HardVariant::Inhomogeneous => match params.wait {
            Some(w) => w,
            None => (horizon / 2).saturating_sub(d),
        },
    };
    match variant {
        HardVariant::Homogeneous if horizon < d + 1 => {
            return invalid(format!("H must be at least d + 1 = {}", d + 1));
        }
        HardVariant::Inhomogeneous if wait == 0 || wait + d + 1 > horizon => {
            return invalid(format!("need 1 ≤ wait and wait + d + 1 ≤ H, got wait {wait}, d {d}, H {horizon}"));
        }
        _ => {}
    }
    let options = match variant {
        HardVariant::Homogeneous => la,
        HardVariant::Inhomogeneous => wait as f64 * la,
    };
    let epsilon = match params.epsilon {
        Some(e) => e,
        None => (1.0 - 1.0 / options) * (options / (8.0 * episodes as f64)).sqrt(),
    };
    if !(0.0..=0.25).contains(&epsilon) {
        return invalid(format!("epsilon must lie in [0, 1/4], got {epsilon}"));
    }
    let star = params.star.unwrap_or(Star {
        leaf: leaves - 1,
        action: actions - 1,
        step: match variant {
            HardVariant::Homogeneous => None,
            HardVariant::Inhomogeneous => Some(d + wait - 1),
        },
    });
    if star.leaf >= leaves || star.action >= actions {
        return invalid(format!("star {star:?} outside {leaves} leaves × {actions} actions"));
    }
    if variant == HardVariant::Inhomogeneous {
        match star.step {
            Some(h) if (d..d + wait).contains(&h) => {}
            other => return invalid(format!("star step must lie in {}..{}, got {other:?}", d, d + wait)),
        }
    }

    let build = |eps: f64| -> Result<MdpSpec, EnvError> {
        let mut b = match variant {
            HardVariant::Homogeneous => MdpBuilder::homogeneous(states, actions, horizon),
            HardVariant::Inhomogeneous => MdpBuilder::inhomogeneous(states, actions, horizon),
        };
        for layer in 0..b.num_layers() {
            for node in 0..first_leaf {
                for a in 0..actions {
                    b.goto(layer, node, a, 2 * node + 1 + a % 2);
                }
            }
            for leaf in 0..leaves {
                for a in 0..actions {
                    let hit = leaf == star.leaf
                        && a == star.action
                        && (variant == HardVariant::Homogeneous || star.step == Some(layer));
                    let up = if hit { 0.5 + eps } else { 0.5 };
                    let mut row = vec![0.0; states];
                    row[good] = up;
                    row[bad] = 1.0 - up;
                    b.transition(layer, first_leaf + leaf, a, &row);
                }
            }
            for a in 0..actions {
                b.goto(layer, bad, a, bad);
                match variant {
                    HardVariant::Homogeneous => {
                        b.goto(layer, good, a, bad);
                        b.reward(layer, good, a, RewardDist::det(t));
                    }
                    HardVariant::Inhomogeneous => {
                        b.goto(layer, good, a, good);
                        if layer >= wait + d {
                            b.reward(layer, good, a, RewardDist::det(t));
                        }
                        let stay = a == 0 && layer < wait;
                        b.goto(layer, spare, a, if stay { spare } else { 0 });
                    }
                }
            }
        }
        let start = match variant {
            HardVariant::Homogeneous => 0,
            HardVariant::Inhomogeneous => spare,
        };
        b.initial_state(&one_hot(states, start));
        flag_if_bounded(&mut b)
    };

    Ok(HardInstance {
        mdp: build(epsilon)?,
        reference: build(0.0)?,
        epsilon,
        d,
        leaves,
        horizon,
        star,
        good_state: good,
        bad_state: bad,
        wait_state: (variant == HardVariant::Inhomogeneous).then_some(spare),
        wait,
    })
}

/// Multiplies every reward by `1/H`. Bernoulli rewards keep their success
/// probability and shrink their payout, so the result collects at most 1
/// per episode almost surely.
pub fn normalize_rewards(mdp: &MdpSpec) -> Result<MdpSpec, EnvError> {
    let factor = 1.0 / mdp.horizon() as f64;
    let mut b = MdpBuilder::from(mdp);
    for layer in 0..mdp.num_layers() {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                b.reward(layer, s, a, mdp.reward(layer, s, a).scaled(factor));
            }
        }
    }
    Ok(b.bounded_total_reward(true).build()?)
}

/// Index of `(h, s)` in the homogenized state space.
pub fn mega_state(h: usize, s: usize, num_states: usize) -> usize {
    h * num_states + s
}

/// Folds the step into the state: `S·H` mega-states plus one absorbing
/// zero-reward terminal, time-homogeneous, same horizon.
pub fn homogenize(mdp: &MdpSpec) -> Result<MdpSpec, EnvError> {
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let total = s_len * h_len + 1;
    let terminal = total - 1;
    let mut b = MdpBuilder::homogeneous(total, a_len, h_len);
    let mut row = vec![0.0; total];
    for h in 0..h_len {
        for s in 0..s_len {
            let from = mega_state(h, s, s_len);
            for a in 0..a_len {
                if h + 1 < h_len {
                    row.fill(0.0);
                    row[mega_state(h + 1, 0, s_len)..mega_state(h + 2, 0, s_len)].copy_from_slice(mdp.transition(h, s, a));
                    b.transition(0, from, a, &row);
                } else {
                    b.goto(0, from, a, terminal);
                }
                b.reward(0, from, a, *mdp.reward(h, s, a));
            }
        }
    }
    let mut init = vec![0.0; total];
    init[..s_len].copy_from_slice(mdp.initial_state());
    b.initial_state(&init)
        .deterministic(mdp.is_deterministic())
        .bounded_total_reward(mdp.has_bounded_total_reward());
    Ok(b.build()?)
}

/// The policy on the homogenized MDP that plays `policy(j, s)` at mega-state
/// `(j, s)` regardless of the step.
pub fn lift_policy(policy: &Policy) -> Policy {
    let (h_len, s_len) = (policy.horizon(), policy.num_states());
    let total = s_len * h_len + 1;
    Policy::from_fn(h_len, total, |_, m| if m + 1 == total { 0 } else { policy.action(m / s_len, m % s_len) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    /// Deterministic, uniform in `[0, 1]`.
    #[default]
    Deterministic,
    /// Bernoulli with a uniform success probability.
    Bernoulli,
    /// Each pair flips a coin between the two.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMdpParams {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    /// Nonzero entries per transition row; defaults to `S`.
    #[serde(default)]
    pub support: Option<usize>,
    #[serde(default)]
    pub reward_kind: RewardKind,
    #[serde(default = "yes")]
    pub homogeneous: bool,
    /// Scale rewards by `1/H` and flag the bounded total reward.
    #[serde(default)]
    pub normalized: bool,
    /// Initial state drawn uniformly instead of state 0.
    #[serde(default)]
    pub random_start: bool,
}

fn yes() -> bool {
    true
}

impl RandomMdpParams {
    pub fn new(states: usize, actions: usize, horizon: usize) -> Self {
        RandomMdpParams {
            states,
            actions,
            horizon,
            support: None,
            reward_kind: RewardKind::default(),
            homogeneous: true,
            normalized: false,
            random_start: false,
        }
    }
}

/// Random MDP whose rows put Dirichlet(1) mass on exactly `support` states.
pub fn make_random_mdp<R: Rng + ?Sized>(params: &RandomMdpParams, rng: &mut R) -> Result<MdpSpec, EnvError> {
    let &RandomMdpParams {
        states,
        actions,
        horizon,
        reward_kind,
        homogeneous,
        normalized,
        random_start,
        ..
    } = params;
    if states == 0 || actions == 0 || horizon == 0 {
        return invalid("S, A and H must be positive");
    }
    let support = params.support.unwrap_or(states);
    if support == 0 || support > states {
        return invalid(format!("support must lie in 1..={states}, got {support}"));
    }
    let mut b = if homogeneous {
        MdpBuilder::homogeneous(states, actions, horizon)
    } else {
        MdpBuilder::inhomogeneous(states, actions, horizon)
    };
    let scale = if normalized { 1.0 / horizon as f64 } else { 1.0 };
    let mut row = vec![0.0; states];
    for layer in 0..b.num_layers() {
        for s in 0..states {
            for a in 0..actions {
                row.fill(0.0);
                let picks = sample(rng, states, support);
                let weights: Vec<f64> = loop {
                    let w: Vec<f64> = (0..support).map(|_| Exp1.sample(rng)).collect();
                    if w.iter().all(|x: &f64| *x > 0.0) {
                        break w;
                    }
                };
                let sum: f64 = weights.iter().sum();
                for (j, w) in picks.iter().zip(&weights) {
                    row[j] = w / sum;
                }
                b.transition(layer, s, a, &row);
                let bern = match reward_kind {
                    RewardKind::Deterministic => false,
                    RewardKind::Bernoulli => true,
                    RewardKind::Mixed => rng.random::<bool>(),
                };
                let x: f64 = rng.random();
                let dist = if bern {
                    RewardDist::bern(x)
                } else {
                    RewardDist::det(x)
                };
                b.reward(layer, s, a, dist.scaled(scale));
            }
        }
    }
    if random_start {
        b.initial_state(&one_hot(states, rng.random_range(0..states)));
    }
    b.deterministic(support == 1 && reward_kind == RewardKind::Deterministic);
    b.bounded_total_reward(normalized);
    Ok(b.build()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterministicMdpParams {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    /// Rewards are `j / (levels · H)` with `j` uniform in `0..=levels`, so
    /// return gaps are multiples of `1/(levels · H)`.
    #[serde(default = "default_levels")]
    pub levels: u32,
    #[serde(default = "yes")]
    pub homogeneous: bool,
}

fn default_levels() -> u32 {
    4
}

/// Random deterministic MDP on a reward grid, bounded total reward.
pub fn make_deterministic_mdp<R: Rng + ?Sized>(params: &DeterministicMdpParams, rng: &mut R) -> Result<MdpSpec, EnvError> {
    let &DeterministicMdpParams {
        states,
        actions,
        horizon,
        levels,
        homogeneous,
    } = params;
    if states == 0 || actions == 0 || horizon == 0 || levels == 0 {
        return invalid("S, A, H and levels must be positive");
    }
    let mut b = if homogeneous {
        MdpBuilder::homogeneous(states, actions, horizon)
    } else {
        MdpBuilder::inhomogeneous(states, actions, horizon)
    };
    let unit = 1.0 / (levels as f64 * horizon as f64);
    for layer in 0..b.num_layers() {
        for s in 0..states {
            for a in 0..actions {
                b.goto(layer, s, a, rng.random_range(0..states));
                b.reward(layer, s, a, RewardDist::det(rng.random_range(0..=levels) as f64 * unit));
            }
        }
    }
    Ok(b.deterministic(true).bounded_total_reward(true).build()?)
}

/// Chain where the last action moves right and pays `1/H`; action `a`
/// below it stays put and pays `a/(A·H)`.
pub fn make_deterministic_chain(states: usize, actions: usize, horizon: usize) -> Result<MdpSpec, EnvError> {
    if states == 0 || actions < 2 || horizon == 0 {
        return invalid("need S ≥ 1, A ≥ 2, H ≥ 1");
    }
    let mut b = MdpBuilder::homogeneous(states, actions, horizon);
    let hf = horizon as f64;
    for s in 0..states {
        for a in 0..actions - 1 {
            b.goto(0, s, a, s);
            b.reward(0, s, a, RewardDist::det(a as f64 / (actions as f64 * hf)));
        }
        b.goto(0, s, actions - 1, (s + 1).min(states - 1));
        b.reward(0, s, actions - 1, RewardDist::det(1.0 / hf));
    }
    Ok(b.deterministic(true).bounded_total_reward(true).build()?)
}

/// Deterministic ring with one planted near-optimal action per state.
///
/// The last action moves `s → s + 1 mod S` and pays `1/H`; the one below it
/// makes the same move for `1/H − gap`; every other action pays nothing and
/// returns to state 0. The smallest action gap is exactly `gap`.
pub fn make_gap_ring(states: usize, actions: usize, horizon: usize, gap: f64) -> Result<MdpSpec, EnvError> {
    if states == 0 || actions < 2 || horizon == 0 {
        return invalid("need S ≥ 1, A ≥ 2, H ≥ 1");
    }
    let top = 1.0 / horizon as f64;
    if !(gap > 0.0 && gap <= top) {
        return invalid(format!("gap must lie in (0, 1/H], got {gap}"));
    }
    let mut b = MdpBuilder::homogeneous(states, actions, horizon);
    for s in 0..states {
        let next = (s + 1) % states;
        for a in 0..actions - 2 {
            b.goto(0, s, a, 0);
        }
        b.goto(0, s, actions - 2, next).reward(0, s, actions - 2, RewardDist::det(top - gap));
        b.goto(0, s, actions - 1, next).reward(0, s, actions - 1, RewardDist::det(top));
    }
    Ok(b.deterministic(true).bounded_total_reward(true).build()?)
}

/// Names accepted by [`build_named`].
pub const ENV_NAMES: &[&str] = &[
    "uniform-goodaction",
    "fig1",
    "hard-instance",
    "random",
    "deterministic",
    "chain",
    "gap-ring",
];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Sah {
    #[serde(rename = "S")]
    states: usize,
    #[serde(rename = "A")]
    actions: usize,
    #[serde(rename = "H")]
    horizon: usize,
}

#[derive(Deserialize)]
struct GapRing {
    #[serde(flatten)]
    sah: Sah,
    gap: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Fig1Params {
    p: f64,
}

/// Adds an optional `seed` key (default 0) to a parameter record.
#[derive(Deserialize)]
struct Seeded<T> {
    #[serde(default)]
    seed: u64,
    #[serde(flatten)]
    inner: T,
}

/// Builds an environment by name from a JSON parameter record. Random
/// families take a `seed` key, independent of any experiment seed.
pub fn build_named(name: &str, params: &Value) -> Result<MdpSpec, EnvError> {
    let p = params.clone();
    match name {
        "uniform-goodaction" => {
            let Sah {
                states,
                actions,
                horizon,
            } = serde_json::from_value(p)?;
            make_uniform_goodaction_mdp(states, actions, horizon)
        }
        "fig1" => make_fig1_mdp(serde_json::from_value::<Fig1Params>(p)?.p),
        "hard-instance" => Ok(make_hard_instance(&serde_json::from_value(p)?)?.mdp),
        "random" => {
            let Seeded { seed, inner } = serde_json::from_value::<Seeded<RandomMdpParams>>(p)?;
            make_random_mdp(&inner, &mut stream(seed, 0))
        }
        "deterministic" => {
            let Seeded { seed, inner } = serde_json::from_value::<Seeded<DeterministicMdpParams>>(p)?;
            make_deterministic_mdp(&inner, &mut stream(seed, 0))
        }
        "chain" => {
            let Sah {
                states,
                actions,
                horizon,
            } = serde_json::from_value(p)?;
            make_deterministic_chain(states, actions, horizon)
        }
        "gap-ring" => {
            let GapRing { sah, gap } = serde_json::from_value(p)?;
            make_gap_ring(sah.states, sah.actions, sah.horizon, gap)
        }
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{max_support, policy_evaluation, simulate_episode, value_iteration};
    use crate::rng::env_stream;
    use crate::variance::{var_policy, var_sigma_trajectory, var_star, VarStarMode, DEFAULT_ENUMERATION_BUDGET};
    use serde_json::json;

    const EXACT: VarStarMode = VarStarMode::Exact {
        budget: DEFAULT_ENUMERATION_BUDGET,
    };

    #[test]
    fn uniform_goodaction_values() {
        let mdp = make_uniform_goodaction_mdp(3, 2, 4).unwrap();
        let plan = value_iteration(&mdp);
        for h in 0..=4 {
            for s in 0..3 {
                assert!((plan.v_star[[h, s]] - (4 - h) as f64 / 4.0).abs() < 1e-12);
            }
        }
        let mut rng = env_stream(0);
        for _ in 0..20 {
            let tau = simulate_episode(&mdp, |h, s| (h + s) % 2, &mut rng, 0).unwrap();
            assert!(var_sigma_trajectory(&mdp, &plan, &tau).abs() < 1e-12);
        }
        let tiny = make_uniform_goodaction_mdp(2, 2, 2).unwrap();
        assert!(var_star(&tiny, EXACT).unwrap().value > 0.0);
    }

    #[test]
    fn fig1_values() {
        for p in [0.1, 0.5, 1.0] {
            let mdp = make_fig1_mdp(p).unwrap();
            let v = policy_evaluation(&mdp, &Policy::constant(3, 5, 0)).unwrap();
            assert!((v[[0, fig1::S1]] - p / 2.0).abs() < 1e-12);
            assert!(var_star(&mdp, EXACT).unwrap().value <= p / 2.0 + 1e-12);
        }
        assert!(make_fig1_mdp(0.0).is_err());
    }

    fn hard(states: usize, t: f64, variant: HardVariant) -> HardInstanceParams {
        HardInstanceParams {
            states,
            actions: 2,
            episodes: 1000,
            t,
            epsilon: None,
            star: None,
            variant,
            horizon: None,
            wait: None,
        }
    }

    #[test]
    fn hard_instance_layout() {
        let inst = make_hard_instance(&hard(6, 0.5, HardVariant::Homogeneous)).unwrap();
        assert_eq!((inst.d, inst.leaves, inst.horizon), (2, 2, 3));
        assert_eq!((inst.good_state, inst.bad_state), (3, 4));
        let la: f64 = 4.0;
        let expected = (1.0 - 1.0 / la) * (la / 8000.0).sqrt();
        assert!((inst.epsilon - expected).abs() < 1e-15);
        assert!(inst.mdp.has_bounded_total_reward());
        // S = 10 has d = 3: 7 tree nodes, 4 leaves
        let big = make_hard_instance(&hard(10, 0.5, HardVariant::Homogeneous)).unwrap();
        assert_eq!((big.d, big.leaves, big.leaf_state(0)), (3, 4, 3));
    }

    #[test]
    fn hard_instance_gap_and_split_variance() {
        let t = 0.6;
        let inst = make_hard_instance(&hard(6, t, HardVariant::Homogeneous)).unwrap();
        let plan = value_iteration(&inst.mdp);
        let leaf_step = inst.d - 1;
        let star_leaf = inst.leaf_state(inst.star.leaf);
        let q = &plan.q_star;
        let gap = q[[leaf_step, star_leaf, inst.star.action]] - q[[leaf_step, star_leaf, 0]];
        assert!((gap - t * inst.epsilon).abs() < 1e-12);
        let next = plan.v_star.row(leaf_step + 1).to_vec();
        let other = inst.leaf_state(0);
        let split = crate::variance::step_variance(&inst.mdp, leaf_step, other, 0, &next);
        assert!((split - t * t / 4.0).abs() < 1e-12);
        // the reference MDP has nothing to learn
        let reference = value_iteration(&inst.reference);
        let leaf_q = reference.q_star.slice(ndarray::s![leaf_step, inst.leaf_state(0).., ..]);
        assert!(leaf_q.iter().take(inst.leaves * 2).all(|&x| (x - t / 2.0).abs() < 1e-12));
    }

    #[test]
    fn hard_instance_variance_bracket() {
        // Any policy through a non-starred leaf action splits evenly, which
        // maximizes the return variance: t²/4.
        for t in [1.0, 0.5, 0.1] {
            let inst = make_hard_instance(&hard(6, t, HardVariant::Homogeneous)).unwrap();
            let vs = var_star(&inst.mdp, EXACT).unwrap().value;
            assert!((vs - t * t / 4.0).abs() < 1e-12);
            assert!(vs >= t * t / 8.0 && vs <= t * t, "t={t} Var*={vs}");
        }
        // Inhomogeneous: the good state pays t on each of the H − wait − d
        // last steps, so the even split has variance (t(H − wait − d))²/4.
        let t = 0.1;
        let inst = make_hard_instance(&hard(6, t, HardVariant::Inhomogeneous)).unwrap();
        assert_eq!((inst.horizon, inst.wait, inst.wait_state), (12, 4, Some(5)));
        let h = inst.horizon as f64;
        let window = h - (inst.wait + inst.d) as f64;
        // leave the waiting state at once so the good state pays every step
        let leave = Policy::from_fn(inst.horizon, 6, |_, s| usize::from(Some(s) == inst.wait_state));
        let pv = var_policy(&inst.mdp, &leave).unwrap();
        assert!((pv.max_over_starts - (t * window).powi(2) / 4.0).abs() < 1e-12);
        let scale = t * t * h * h;
        assert!(pv.max_over_starts >= scale / 16.0 - 1e-12 && pv.max_over_starts <= scale);
        let plan = value_iteration(&inst.mdp);
        let best = var_policy(&inst.mdp, &plan.optimal_policy).unwrap();
        assert!(best.max_over_starts <= pv.max_over_starts + 1e-12);
    }

    #[test]
    fn hard_instance_rejects_bad_params() {
        assert!(make_hard_instance(&hard(5, 0.5, HardVariant::Homogeneous)).is_err());
        assert!(make_hard_instance(&hard(6, 1.5, HardVariant::Homogeneous)).is_err());
        let p = HardInstanceParams {
            episodes: 1,
            ..hard(6, 0.5, HardVariant::Homogeneous)
        };
        assert!(make_hard_instance(&p).is_err(), "epsilon above 1/4");
        let p = HardInstanceParams {
            star: Some(Star {
                leaf: 2,
                action: 0,
                step: None,
            }),
            ..hard(6, 0.5, HardVariant::Homogeneous)
        };
        assert!(make_hard_instance(&p).is_err());
    }

    #[test]
    fn normalize_scales_values() {
        let mut b = MdpBuilder::homogeneous(1, 1, 4);
        b.reward(0, 0, 0, RewardDist::det(1.0));
        let n = normalize_rewards(&b.build().unwrap()).unwrap();
        assert_eq!(n.reward(0, 0, 0).mean(), 0.25);
        assert!((n.max_total_reward() - 1.0).abs() < 1e-12);

        let mut b = MdpBuilder::homogeneous(1, 1, 2);
        b.reward(0, 0, 0, RewardDist::bern(0.8));
        let n = normalize_rewards(&b.build().unwrap()).unwrap();
        assert!((n.reward(0, 0, 0).mean() - 0.4).abs() < 1e-15);

        let mdp = make_random_mdp(&RandomMdpParams::new(3, 2, 3), &mut env_stream(9)).unwrap();
        let before = value_iteration(&mdp).v_star[[0, 0]];
        let after = value_iteration(&normalize_rewards(&mdp).unwrap()).v_star[[0, 0]];
        assert!((after - before / 3.0).abs() < 1e-10);
    }

    #[test]
    fn homogenize_preserves_values() {
        let params = RandomMdpParams {
            homogeneous: false,
            support: Some(2),
            ..RandomMdpParams::new(2, 2, 2)
        };
        let mdp = make_random_mdp(&params, &mut env_stream(3)).unwrap();
        let mega = homogenize(&mdp).unwrap();
        assert_eq!(mega.num_states(), 5);
        assert!(mega.is_homogeneous());
        assert_eq!(max_support(&mega), max_support(&mdp));
        let (a, b) = (value_iteration(&mdp), value_iteration(&mega));
        for h in 0..2 {
            for s in 0..2 {
                assert!((a.v_star[[h, s]] - b.v_star[[h, mega_state(h, s, 2)]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn random_mdp_contract() {
        let params = RandomMdpParams {
            support: Some(2),
            reward_kind: RewardKind::Mixed,
            ..RandomMdpParams::new(4, 3, 3)
        };
        let one = make_random_mdp(&params, &mut env_stream(1)).unwrap();
        let two = make_random_mdp(&params, &mut env_stream(1)).unwrap();
        assert_eq!(one, two);
        assert_eq!(max_support(&one), 2);
        let det = make_random_mdp(
            &RandomMdpParams {
                support: Some(1),
                ..RandomMdpParams::new(4, 3, 3)
            },
            &mut env_stream(1),
        )
        .unwrap();
        assert!(det.is_deterministic());
        assert!(make_random_mdp(
            &RandomMdpParams {
                support: Some(5),
                ..RandomMdpParams::new(4, 3, 3)
            },
            &mut env_stream(1)
        )
        .is_err());
    }

    #[test]
    fn deterministic_families() {
        let chain = make_deterministic_chain(4, 3, 4).unwrap();
        assert!((value_iteration(&chain).initial_value(&chain) - 1.0).abs() < 1e-12);
        let params = DeterministicMdpParams {
            states: 5,
            actions: 3,
            horizon: 4,
            levels: 8,
            homogeneous: true,
        };
        let mdp = make_deterministic_mdp(&params, &mut env_stream(2)).unwrap();
        assert!(mdp.is_deterministic() && mdp.has_bounded_total_reward());
    }

    #[test]
    fn registry() {
        let mdp = build_named("hard-instance", &json!({"S": 6, "A": 2, "K": 1000, "t": 0.5})).unwrap();
        assert_eq!(mdp.num_states(), 6);
        let a = build_named("random", &json!({"S": 3, "A": 2, "H": 2, "seed": 4})).unwrap();
        let b = build_named("random", &json!({"S": 3, "A": 2, "H": 2, "seed": 4})).unwrap();
        assert_eq!(a, b);
        assert!(matches!(build_named("nope", &json!({})), Err(EnvError::UnknownEnv(_))));
        assert!(build_named("fig1", &json!({"p": 0.1, "q": 2})).is_err());
        for name in ENV_NAMES {
            assert!(!matches!(build_named(name, &json!({})), Err(EnvError::UnknownEnv(_))));
        }
    }
}
