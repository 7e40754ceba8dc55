//! Keyed random streams.
//!
//! Every draw in a simulation comes from a stream keyed by `(seed, key, round)`.
//! The key bytes are hashed with SHA-256 into a ChaCha8 seed, so a stream depends
//! only on its key and never on the order in which agents are visited.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A single-consumer random stream.
pub type Stream = ChaCha8Rng;

const DOMAIN: &[u8] = b"beliefdyn/stream/v1";

/// Stream reserved for the visibility assignment of a run.
pub(crate) const VISIBILITY_KEY: &str = "\u{0}visibility";
/// Stream reserved for population generation.
pub(crate) const POPULATION_KEY: &str = "\u{0}population";

pub fn derive_stream(seed: u64, key: &str, round: u64) -> Stream {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update(seed.to_le_bytes());
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.as_bytes());
    h.update(round.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Seed of replicate `k` under master seed `seed`.
pub fn replicate_seed(seed: u64, k: u64) -> u64 {
    derive_stream(seed, "replicate", k).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(mut s: Stream, n: usize) -> Vec<u64> {
        (0..n).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn same_key_same_stream() {
        assert_eq!(
            draws(derive_stream(7, "u1", 3), 64),
            draws(derive_stream(7, "u1", 3), 64)
        );
    }

    #[test]
    fn distinct_keys_differ() {
        let base = draws(derive_stream(7, "u1", 3), 64);
        assert_ne!(base, draws(derive_stream(7, "u2", 3), 64));
        assert_ne!(base, draws(derive_stream(8, "u1", 3), 64));
        assert_ne!(base, draws(derive_stream(7, "u1", 4), 64));
        // length prefix keeps ("u1", r) and ("u", ...) style splits apart
        assert_ne!(
            draws(derive_stream(7, "ab", 0), 4),
            draws(derive_stream(7, "a", 0), 4)
        );
    }

    #[test]
    fn stream_is_pinned_across_platforms() {
        // Frozen first draw; a change here breaks every stored trace.
        let first = derive_stream(0, "u1", 0).next_u64();
        assert_eq!(first, derive_stream(0, "u1", 0).next_u64());
        assert_eq!(format!("{first:016x}"), "6545e53daa5830e2");
    }

    #[test]
    fn replicate_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..100).map(|k| replicate_seed(1, k)).collect();
        assert_eq!(seeds.len(), 100);
    }
}
