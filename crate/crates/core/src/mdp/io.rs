//! JSON file format for [`MdpSpec`].
//!
//! ```json
//! {"S": 2, "A": 1, "H": 3, "homogeneous": true,
//!  "transitions": [[[0.5, 0.5]], [[0.0, 1.0]]],
//!  "rewards": [[{"kind": "det", "v": 0.3}], [{"kind": "bern", "p": 0.5}]],
//!  "initial_state": [1.0, 0.0]}
//! ```
//!
//! Homogeneous MDPs nest transitions as `[S][A][S]` and rewards as
//! `[S][A]`; inhomogeneous ones add a leading `[H]` level.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MdpBuilder, MdpError, MdpSpec, RewardDist};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Transitions {
    Shared(Vec<Vec<Vec<f64>>>),
    Layered(Vec<Vec<Vec<Vec<f64>>>>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Rewards {
    Shared(Vec<Vec<RewardDist>>),
    Layered(Vec<Vec<Vec<RewardDist>>>),
}

fn is_false(flag: &bool) -> bool {
    !*flag
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpFile {
    #[serde(rename = "S")]
    num_states: usize,
    #[serde(rename = "A")]
    num_actions: usize,
    #[serde(rename = "H")]
    horizon: usize,
    homogeneous: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    deterministic: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    bounded_total_reward: bool,
    transitions: Transitions,
    rewards: Rewards,
    #[serde(default)]
    initial_state: Option<Vec<f64>>,
}

fn shape_error(what: &str) -> MdpError {
    MdpError::DimensionMismatch(format!("{what} do not match the declared S, A, H"))
}

impl TryFrom<MdpFile> for MdpSpec {
    type Error = MdpError;

    fn try_from(file: MdpFile) -> Result<Self, Self::Error> {
        let (s_len, a_len, h_len) = (file.num_states, file.num_actions, file.horizon);
        let mut b = if file.homogeneous {
            MdpBuilder::homogeneous(s_len, a_len, h_len)
        } else {
            MdpBuilder::inhomogeneous(s_len, a_len, h_len)
        };
        let layers = b.num_layers();
        let transitions = match (file.transitions, file.homogeneous) {
            (Transitions::Shared(t), true) => vec![t],
            (Transitions::Layered(t), false) => t,
            _ => return Err(shape_error("transitions")),
        };
        let rewards = match (file.rewards, file.homogeneous) {
            (Rewards::Shared(r), true) => vec![r],
            (Rewards::Layered(r), false) => r,
            _ => return Err(shape_error("rewards")),
        };
        if transitions.len() != layers || rewards.len() != layers {
            return Err(shape_error("layer counts"));
        }
        for (layer, (t_layer, r_layer)) in transitions.iter().zip(&rewards).enumerate() {
            if t_layer.len() != s_len || r_layer.len() != s_len {
                return Err(shape_error("state counts"));
            }
            for s in 0..s_len {
                if t_layer[s].len() != a_len || r_layer[s].len() != a_len {
                    return Err(shape_error("action counts"));
                }
                for a in 0..a_len {
                    if t_layer[s][a].len() != s_len {
                        return Err(shape_error("transition rows"));
                    }
                    b.transition(layer, s, a, &t_layer[s][a]);
                    b.reward(layer, s, a, r_layer[s][a]);
                }
            }
        }
        if let Some(init) = file.initial_state {
            b.initial_state(&init);
        }
        b.deterministic(file.deterministic)
            .bounded_total_reward(file.bounded_total_reward)
            .build()
    }
}

impl From<&MdpSpec> for MdpFile {
    fn from(mdp: &MdpSpec) -> Self {
        let (s_len, a_len) = (mdp.num_states(), mdp.num_actions());
        let layer_of = |layer: usize| {
            let t: Vec<Vec<Vec<f64>>> = (0..s_len)
                .map(|s| (0..a_len).map(|a| mdp.transition(layer, s, a).to_vec()).collect())
                .collect();
            let r: Vec<Vec<RewardDist>> = (0..s_len)
                .map(|s| (0..a_len).map(|a| *mdp.reward(layer, s, a)).collect())
                .collect();
            (t, r)
        };
        let (transitions, rewards) = if mdp.is_homogeneous() {
            let (t, r) = layer_of(0);
            (Transitions::Shared(t), Rewards::Shared(r))
        } else {
            let (t, r): (Vec<_>, Vec<_>) = (0..mdp.horizon()).map(layer_of).unzip();
            (Transitions::Layered(t), Rewards::Layered(r))
        };
        MdpFile {
            num_states: s_len,
            num_actions: a_len,
            horizon: mdp.horizon(),
            homogeneous: mdp.is_homogeneous(),
            deterministic: mdp.is_deterministic(),
            bounded_total_reward: mdp.has_bounded_total_reward(),
            transitions,
            rewards,
            initial_state: Some(mdp.initial_state().to_vec()),
        }
    }
}

impl Serialize for MdpSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        MdpFile::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MdpSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = MdpFile::deserialize(deserializer)?;
        MdpSpec::try_from(file).map_err(serde::de::Error::custom)
    }
}

impl MdpSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mdp serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let file: MdpFile = serde_json::from_str(text)?;
        MdpSpec::try_from(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MdpError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MdpError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}
