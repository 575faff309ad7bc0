//! Counter-based seeding: every random stream is a pure function of a base
//! seed and a few integer coordinates (step, source, ...), so any stream can
//! be recreated after a checkpoint without storing generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for the stream at `coords` under `seed`.
pub fn derive(seed: u64, coords: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for &c in coords {
        h = splitmix(h ^ splitmix(c));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Stream labels, so call sites read as `derive(seed, &[NOISE, step, source])`.
pub mod stream {
    pub const ORDER: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const SUBSAMPLE: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const PIECES: u64 = 7;
    pub const FINETUNE: u64 = 8;
    pub const DEV_ORDER: u64 = 9;
}
