//! Seeded random substreams.
//!
//! A single user seed fans out into independent named streams so that, for
//! example, changing the mask never perturbs model initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Mask = 1,
    Init = 2,
    Core = 3,
    Lora = 4,
    Split = 5,
    Fixture = 6,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
