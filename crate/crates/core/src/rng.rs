//! Counter-based seeding so every random draw depends only on its role and indices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams of the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    ModelInit = 1,
    Partition = 2,
    LocalSgd = 3,
    Synthetic = 4,
    Capacity = 5,
    Trials = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `(seed, domain, a, b)`; distinct tuples give independent streams.
pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(domain as u64)));
    rng.set_stream(splitmix(a.wrapping_mul(0x1000_0000_01B3) ^ splitmix(b)));
    rng
}
