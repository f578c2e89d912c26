//! Seeded, domain-separated random streams.
//!
//! Every random quantity is drawn from a ChaCha stream keyed by an explicit
//! seed, a domain tag and an index, so frame `j` of a dataset is identical
//! whether frames are generated serially or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const DIFFUSER: u64 = 0x6469_6666;
pub(crate) const TRAJECTORY: u64 = 0x7472_616a;
pub(crate) const NOISE: u64 = 0x6e6f_6973;
pub(crate) const FRAME_ORDER: u64 = 0x6f72_6465;
pub(crate) const SCENE: u64 = 0x7363_656e;

pub(crate) fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index);
    rng
}
