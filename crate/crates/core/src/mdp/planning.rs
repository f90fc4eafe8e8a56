use ndarray::{Array2, Array3};
use serde::Serialize;

use super::{MdpError, MdpSpec, Policy};

/// Backward-induction solution of an MDP.
///
/// `v_star` has shape `(H + 1, S)` with the last row identically zero;
/// `q_star` has shape `(H, S, A)`.
#[derive(Clone, Debug, Serialize)]
pub struct PlanningSolution {
    pub v_star: Array2<f64>,
    pub q_star: Array3<f64>,
    pub optimal_policy: Policy,
}

impl PlanningSolution {
    /// Expected optimal return from the initial-state distribution.
    pub fn initial_value(&self, mdp: &MdpSpec) -> f64 {
        dot(mdp.initial_state(), self.v_star.row(0).as_slice().unwrap())
    }

    /// Largest violation of `Q*_h(s,a) = r + P V*_{h+1}` and
    /// `V*_h(s) = max_a Q*_h(s,a)`.
    pub fn bellman_residual(&self, mdp: &MdpSpec) -> f64 {
        let mut worst: f64 = self.v_star.row(mdp.horizon()).iter().map(|v| v.abs()).fold(0.0, f64::max);
        for h in 0..mdp.horizon() {
            let next = self.v_star.row(h + 1);
            let next = next.as_slice().unwrap();
            for s in 0..mdp.num_states() {
                let mut best = f64::NEG_INFINITY;
                for a in 0..mdp.num_actions() {
                    let backup = mdp.reward(h, s, a).mean() + dot(mdp.transition(h, s, a), next);
                    worst = worst.max((backup - self.q_star[[h, s, a]]).abs());
                    best = best.max(self.q_star[[h, s, a]]);
                }
                worst = worst.max((best - self.v_star[[h, s]]).abs());
            }
        }
        worst
    }
}

#[inline]
pub(crate) fn dot(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Index of the largest entry; ties go to the lowest index.
#[inline]
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Exact `V*`, `Q*` and a greedy optimal policy.
pub fn value_iteration(mdp: &MdpSpec) -> PlanningSolution {
    let (h_len, s_len, a_len) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut v_star = Array2::zeros((h_len + 1, s_len));
    let mut q_star = Array3::zeros((h_len, s_len, a_len));
    let mut policy = Policy::constant(h_len, s_len, 0);
    for h in (0..h_len).rev() {
        let next: Vec<f64> = v_star.row(h + 1).to_vec();
        for s in 0..s_len {
            for a in 0..a_len {
                q_star[[h, s, a]] = mdp.reward(h, s, a).mean() + dot(mdp.transition(h, s, a), &next);
            }
            let best = argmax((0..a_len).map(|a| q_star[[h, s, a]]));
            policy.set(h, s, best);
            v_star[[h, s]] = q_star[[h, s, best]];
        }
    }
    PlanningSolution {
        v_star,
        q_star,
        optimal_policy: policy,
    }
}

/// `V^π_h(s)` for every step, shape `(H + 1, S)`.
pub fn policy_evaluation(mdp: &MdpSpec, policy: &Policy) -> Result<Array2<f64>, MdpError> {
    policy.check_against(mdp)?;
    Ok(evaluate_unchecked(mdp, policy))
}

pub(crate) fn evaluate_unchecked(mdp: &MdpSpec, policy: &Policy) -> Array2<f64> {
    let (h_len, s_len) = (mdp.horizon(), mdp.num_states());
    let mut values = Array2::zeros((h_len + 1, s_len));
    for h in (0..h_len).rev() {
        let next: Vec<f64> = values.row(h + 1).to_vec();
        for s in 0..s_len {
            let a = policy.action(h, s);
            values[[h, s]] = mdp.reward(h, s, a).mean() + dot(mdp.transition(h, s, a), &next);
        }
    }
    values
}

/// Variance of `y` under the distribution `p`, `p·y² − (p·y)²`, clamped at 0.
pub fn dist_variance(p: &[f64], y: &[f64]) -> Result<f64, MdpError> {
    if p.len() != y.len() {
        return Err(MdpError::DimensionMismatch(format!(
            "distribution has {} entries, values have {}",
            p.len(),
            y.len()
        )));
    }
    Ok(variance_under(p, y))
}

/// Tolerance on negative variances produced by cancellation.
pub const VARIANCE_CLAMP_TOL: f64 = 1e-12;

#[inline]
pub(crate) fn variance_under(p: &[f64], y: &[f64]) -> f64 {
    let mut first = 0.0;
    let mut second = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        first += pi * yi;
        second += pi * yi * yi;
    }
    let raw = second - first * first;
    let scale = y.iter().fold(1.0_f64, |m, v| m.max(v * v));
    clamp_variance(raw, VARIANCE_CLAMP_TOL * scale)
}

/// Clamps a variance computed by cancellation to be non-negative. Values
/// more negative than `tol` indicate a bookkeeping bug.
#[inline]
pub(crate) fn clamp_variance(raw: f64, tol: f64) -> f64 {
    debug_assert!(raw >= -tol, "variance {raw} below -{tol}");
    raw.max(0.0)
}
