//! Deterministic random substreams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream keyed by
//! `(seed, domain, a, b)`. Gradient noise for device `i` at round `t`, the
//! sample set of server round `t` and the topology realization of round `t`
//! are therefore independent of one another and of the order in which they
//! are drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag mixed into the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Gradient = 1,
    Sampling = 2,
    Topology = 3,
    Objective = 4,
    Probe = 5,
    Ratio = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(seed, domain, a, b)`.
pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = splitmix(splitmix(splitmix(domain as u64) ^ a) ^ b.rotate_left(17));
    rng.set_stream(id);
    rng
}
