//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit seed. Independent pieces of
//! work (one projection, one input's samples) draw from their own ChaCha
//! stream so results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
