//! Deterministic pseudo-random generator used by every seeded component.
//!
//! Leakage verdicts are reproducibility-sensitive, so the generator is
//! pinned here (splitmix64) instead of depending on an external crate
//! whose stream could change between releases. The same seed must produce
//! the same draws on every platform, forever.

/// Finalizer from splitmix64; also used as a general 64-bit mixer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over raw bytes; stable way to fold strings into seeds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Derive an independent sub-stream seed from `(seed, tag, index)`.
///
/// Used for per-tree forest seeds, per-item forest seeds and per-item
/// training permutations, so that components do not share draws.
pub fn derive_seed(seed: u64, tag: &[u8], index: u64) -> u64 {
    let t = fnv1a64(tag);
    mix64(mix64(seed ^ t).wrapping_add(mix64(index.wrapping_add(GOLDEN))))
}

/// Map a 64-bit word to the open interval (0, 1).
///
/// 53 mantissa bits with the lowest forced to one: never exactly 0 or 1,
/// which keeps range splits strictly inside (min, max).
#[inline]
pub fn unit_open(x: u64) -> f64 {
    (((x >> 11) | 1) as f64) * (1.0 / 9_007_199_254_740_992.0)
}

/// splitmix64 stream.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform draw in the open interval (0, 1).
    #[inline]
    pub fn next_unit_open(&mut self) -> f64 {
        unit_open(self.next_u64())
    }

    /// Uniform draw in 0..n. Modulo reduction; the bias is irrelevant at
    /// the n <= few-hundred scales used here.
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }
}
