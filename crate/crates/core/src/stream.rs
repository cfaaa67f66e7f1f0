//! Counter-based random substreams.
//!
//! A [`StreamKey`] is a master seed plus a path of counters, for example
//! `(seed, replication, purpose, bootstrap index)`. Each key maps through a
//! splitmix64 chain to an independent ChaCha8 seed, so the numbers a task
//! sees do not depend on which worker runs it or in what order.

use rand::rngs::ChaCha8Rng;
use rand::SeedableRng;

/// Purpose tags keep data-generation and bootstrap streams apart.
pub mod purpose {
    pub const DATA: u64 = 1;
    pub const BOOTSTRAP: u64 = 2;
    pub const BOOTSTRAP_F: u64 = 3;
    pub const BOOTSTRAP_G: u64 = 4;
    pub const WEIGHTS: u64 = 5;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hierarchical key identifying one random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    state: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64) -> Self {
        let mut s = master_seed;
        Self { state: splitmix64(&mut s) }
    }

    /// Derives the child key for `index`.
    pub fn child(self, index: u64) -> Self {
        let mut s = self.state ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93);
        let a = splitmix64(&mut s);
        let b = splitmix64(&mut s);
        Self { state: a ^ b.rotate_left(17) }
    }

    pub fn path(self, indices: &[u64]) -> Self {
        indices.iter().fold(self, |k, &i| k.child(i))
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut s = self.state;
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_stream() {
        let a = StreamKey::new(7).path(&[3, purpose::DATA]).rng().next_u64();
        let b = StreamKey::new(7).path(&[3, purpose::DATA]).rng().next_u64();
        assert_eq!(a, b);
    }

    #[test]
    fn siblings_differ() {
        let root = StreamKey::new(7);
        let mut seen = std::collections::HashSet::new();
        for r in 0..1000 {
            for p in [purpose::DATA, purpose::BOOTSTRAP] {
                assert!(seen.insert(root.path(&[r, p]).rng().next_u64()));
            }
        }
    }
}
