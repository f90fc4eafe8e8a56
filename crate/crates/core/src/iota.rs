//! Logarithmic confidence terms.
//!
//! The theorem-level values make every bonus vacuous at desk scale, so a
//! practical mode `c · ln(HSAK/δ)` is offered alongside them.

use serde::{Deserialize, Serialize};

use crate::agent::Dims;

/// How an agent picks its log term `ι`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum IotaMode {
    /// The constant from the regret theorem of the respective algorithm.
    Theorem,
    /// MVP-V's constant for MDPs reached through homogenization (`H^12`).
    TheoremConverted,
    /// `c · ln(HSAK/δ)`.
    Practical {
        #[serde(default = "default_c")]
        c: f64,
    },
    /// A fixed value, mainly for tests.
    Fixed { value: f64 },
}

fn default_c() -> f64 {
    1.0
}

impl Default for IotaMode {
    fn default() -> Self {
        IotaMode::Practical { c: 1.0 }
    }
}

impl IotaMode {
    pub fn model_based(&self, dims: Dims, episodes: usize, delta: f64) -> f64 {
        let (h, s, a, k) = dims.as_floats(episodes);
        match *self {
            IotaMode::Theorem => default_iota(h, s, a, k, delta),
            IotaMode::TheoremConverted => converted_iota(h, s, a, k, delta),
            IotaMode::Practical { c } => practical_iota(c, h, s, a, k, delta),
            IotaMode::Fixed { value } => value,
        }
    }

    pub fn model_free(&self, dims: Dims, episodes: usize, delta: f64) -> f64 {
        let (h, s, a, k) = dims.as_floats(episodes);
        match *self {
            IotaMode::Theorem | IotaMode::TheoremConverted => default_iota_mf(h, s, a, k, delta),
            IotaMode::Practical { c } => practical_iota(c, h, s, a, k, delta),
            IotaMode::Fixed { value } => value,
        }
    }

    pub fn is_theorem(&self) -> bool {
        matches!(self, IotaMode::Theorem | IotaMode::TheoremConverted)
    }
}

/// `99 (ln(3000² H^5 S^7 A^5 K^5 / δ²) + 1)`, evaluated in log space.
pub fn default_iota(h: f64, s: f64, a: f64, k: f64, delta: f64) -> f64 {
    let log = 2.0 * 3000f64.ln() + 5.0 * h.ln() + 7.0 * s.ln() + 5.0 * a.ln() + 5.0 * k.ln() - 2.0 * delta.ln();
    99.0 * (log + 1.0)
}

/// `99 (ln(3000² H^12 S^7 A^5 K^5 / δ²) + 1)`.
pub fn converted_iota(h: f64, s: f64, a: f64, k: f64, delta: f64) -> f64 {
    default_iota(h, s, a, k, delta) + 99.0 * 7.0 * h.ln()
}

/// `99 (ln(7000² (HSAK)^5 / δ²) + 1)`.
pub fn default_iota_mf(h: f64, s: f64, a: f64, k: f64, delta: f64) -> f64 {
    let log = 2.0 * 7000f64.ln() + 5.0 * (h * s * a * k).ln() - 2.0 * delta.ln();
    99.0 * (log + 1.0)
}

pub fn practical_iota(c: f64, h: f64, s: f64, a: f64, k: f64, delta: f64) -> f64 {
    c * (h * s * a * k / delta).ln()
}

/// `⌈½ log2(K / (H^5 S^3 A ι²))⌉`, floored at 1 so the reference value is
/// refreshed at least once.
pub fn default_i_star(dims: Dims, episodes: usize, iota: f64) -> u32 {
    let (h, s, a, k) = dims.as_floats(episodes);
    let raw = 0.5 * (k / (h.powi(5) * s.powi(3) * a * iota * iota)).log2();
    if raw.is_finite() && raw > 1.0 {
        raw.ceil() as u32
    } else {
        1
    }
}
