//! Seedable, platform-stable random streams.
//!
//! Every stochastic routine takes an explicit [`SimRng`]. Independent streams
//! are carved out of one seed with ChaCha's 64-bit stream selector, so a
//! replicate or a gene always sees the same numbers regardless of the order
//! in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type SimRng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Stream for a labelled unit of work (`"replicate"`, `"gwas"`, ...) and index.
pub fn stream(seed: u64, domain: &str, index: u64) -> SimRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(fnv1a(domain.as_bytes()) ^ splitmix64(index)));
    rng
}

/// Stream keyed by `(seed, gene_id)`; used for fallback p-value draws.
pub fn gene_stream(seed: u64, gene_id: &str) -> SimRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(fnv1a(b"gene") ^ fnv1a(gene_id.as_bytes())));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
