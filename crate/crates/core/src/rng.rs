//! Seed splitting. One master seed yields independent ChaCha streams for
//! environment sampling and for agent-side randomness, so adding agent
//! randomness never perturbs environment draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ENV_STREAM: u64 = 0;
pub const AGENT_STREAM: u64 = 1;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn env_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, ENV_STREAM)
}

pub fn agent_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, AGENT_STREAM)
}
