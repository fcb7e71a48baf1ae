use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream names used by the experiments. These are part of the output
/// contract: renaming one changes every result file.
pub mod streams {
    pub const ENV: &str = "env";
    pub const INIT: &str = "init";
    pub const ACTION: &str = "action";
    pub const REPLAY: &str = "replay";
    pub const CEM: &str = "cem";
    pub const TASKS: &str = "tasks";
    pub const NOISE: &str = "noise";
}

/// Independent deterministic RNG streams derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// 64-bit seed for the named stream.
    pub fn seed(&self, name: &str) -> u64 {
        splitmix(splitmix(self.master) ^ fnv1a(name))
    }

    pub fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_stable_and_distinct() {
        let s = SeedStreams::new(3);
        assert_eq!(s.seed(streams::ENV), SeedStreams::new(3).seed(streams::ENV));
        assert_ne!(s.seed(streams::ENV), s.seed(streams::INIT));
        assert_ne!(s.seed(streams::ENV), SeedStreams::new(4).seed(streams::ENV));
        let a: u64 = s.rng(streams::CEM).random();
        let b: u64 = s.rng(streams::CEM).random();
        assert_eq!(a, b);
    }

    #[test]
    fn seed_values_are_pinned() {
        // Changing the derivation silently would change every stored result.
        assert_eq!(fnv1a(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
