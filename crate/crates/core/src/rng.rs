//! Named random substreams derived from a single scenario seed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// FNV-1a, used only to turn stream names into stream ids.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// ChaCha20 keyed by `seed`, on the stream selected by `name`.
pub fn substream(seed: u64, name: &str) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}
