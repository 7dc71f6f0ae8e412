//! Seed derivation. Every stochastic step draws from a ChaCha stream whose
//! seed is a pure function of its coordinates, so results never depend on
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Folds a list of words into one 64-bit seed.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x2545_F491_4F6C_DD1D, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for one patch in one epoch.
pub fn patch_stream(global_seed: u64, slide_id: &str, grid_x: u32, grid_y: u32, epoch: u32) -> Stream {
    stream(mix(&[
        global_seed,
        fnv1a(slide_id.as_bytes()),
        u64::from(grid_x),
        u64::from(grid_y),
        u64::from(epoch),
    ]))
}
