//! Seeded random streams forked per subsystem.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels. Each subsystem draws from its own generator so that
/// adding draws in one place never shifts another.
pub mod label {
    pub const INIT: &str = "init";
    pub const ENCODER: &str = "encoder";
    pub const MLP: &str = "mlp";
    pub const SMOOTHER: &str = "smoother";
    pub const SAMPLING: &str = "frame-sampling";
    pub const DENSIFY: &str = "densify";
    pub const SYNTHETIC: &str = "synthetic";
    pub const GRADCHECK: &str = "gradcheck";
}

/// FNV-1a of the label, mixed into the seed with splitmix64.
pub fn fork_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fork(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fork_seed(seed, label))
}
