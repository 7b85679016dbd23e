//! Deterministic per-block random streams.
//!
//! A stream is identified by the master seed plus a tuple of integers (chain,
//! sweep, block kind, indices). The tuple is folded through a SplitMix64-style
//! finalizer and used to seed a ChaCha8 generator, so any block can be
//! recreated independently of how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type BlockRng = ChaCha8Rng;

/// Which sampler block a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamKind {
    Init = 1,
    Sigma2 = 2,
    Volatility = 3,
    Loadings = 4,
    Factors = 5,
    GroupInclusion = 6,
    ScaleMove = 7,
    Simulation = 8,
    Regression = 9,
    Geweke = 10,
    Relabel = 11,
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a sequence of words into one 64-bit seed.
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    let mut h = mix64(master.wrapping_add(0x9e37_79b9_7f4a_7c15));
    for &w in words {
        h = mix64(h ^ mix64(w.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

pub fn stream(master: u64, kind: StreamKind, words: &[u64]) -> BlockRng {
    let mut all = Vec::with_capacity(words.len() + 1);
    all.push(kind as u64);
    all.extend_from_slice(words);
    ChaCha8Rng::seed_from_u64(derive_seed(master, &all))
}

/// Stream for one sampler block in one sweep of one chain.
pub fn block_stream(
    master: u64,
    chain: u64,
    sweep: u64,
    kind: StreamKind,
    indices: &[u64],
) -> BlockRng {
    let mut words = Vec::with_capacity(indices.len() + 2);
    words.push(chain);
    words.push(sweep);
    words.extend_from_slice(indices);
    stream(master, kind, &words)
}
