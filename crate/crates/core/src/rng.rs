//! Coordinate-keyed pseudorandomness.
//!
//! Every draw is a pure function of a [`StreamKey`]: a seed, a domain tag and
//! four coordinates. There is no sequential generator state, so draws do not
//! depend on evaluation order or on how work is split across threads.
//!
//! The key is folded field by field through the SplitMix64 finalizer. Hot loops
//! that vary only the last coordinate can hash the prefix once with
//! [`StreamKey::lanes`] and pay a single mix per draw; the result is identical
//! to calling [`uniform01`] on the full key.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline(always)]
fn absorb(h: u64, word: u64) -> u64 {
    mix(h ^ word.wrapping_add(1).wrapping_mul(GAMMA))
}

#[inline(always)]
fn to_unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Which consumer a stream belongs to. Streams in different domains never
/// share draws even when seed and coordinates coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Domain {
    Dither = 1,
    Sign = 2,
    Data = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub domain: Domain,
    pub coords: [u64; 4],
}

impl StreamKey {
    pub const fn new(seed: u64, domain: Domain) -> Self {
        Self {
            seed,
            domain,
            coords: [0; 4],
        }
    }

    /// Copy of the key with coordinate `slot` set to `value`.
    #[must_use]
    pub fn at(mut self, slot: usize, value: u64) -> Self {
        self.coords[slot] = value;
        self
    }

    #[must_use]
    pub fn with_coords(mut self, coords: [u64; 4]) -> Self {
        self.coords = coords;
        self
    }

    #[must_use]
    pub fn in_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Fresh key whose seed is the hash of this key plus `tag`, with zeroed
    /// coordinates. Used to nest more than four levels of indices.
    #[must_use]
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            seed: absorb(self.hash64(), tag),
            domain: self.domain,
            coords: [0; 4],
        }
    }

    #[inline]
    fn prefix_hash(&self) -> u64 {
        let mut h = mix(self.seed ^ (self.domain as u64).wrapping_mul(GAMMA));
        for &c in &self.coords[..3] {
            h = absorb(h, c);
        }
        h
    }

    /// 64-bit digest of the whole key.
    #[inline]
    pub fn hash64(&self) -> u64 {
        absorb(self.prefix_hash(), self.coords[3])
    }

    /// Draws for this key with the last coordinate replaced by each lane index.
    #[inline]
    pub fn lanes(&self) -> Lanes {
        Lanes {
            prefix: self.prefix_hash(),
        }
    }

    /// A conventional RNG seeded from this key, for bulk sampling from
    /// distributions where per-draw keying is unnecessary.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.hash64())
    }
}

/// Prefix-hashed key; lane `i` reproduces the key with `coords[3] = i`.
#[derive(Debug, Clone, Copy)]
pub struct Lanes {
    prefix: u64,
}

impl Lanes {
    #[inline(always)]
    pub fn bits(&self, lane: u64) -> u64 {
        absorb(self.prefix, lane)
    }

    #[inline(always)]
    pub fn uniform01(&self, lane: u64) -> f64 {
        to_unit(self.bits(lane))
    }
}

/// Uniform draw in `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn uniform01(key: &StreamKey) -> f64 {
    to_unit(key.hash64())
}

/// `g` independent ±1 signs. One hash supplies 64 signs; entry `i` uses bit
/// `i % 64` of lane `i / 64`.
pub fn sign_vector(key: &StreamKey, g: usize) -> Vec<f64> {
    let lanes = key.lanes();
    let mut out = Vec::with_capacity(g);
    let mut word = 0u64;
    for i in 0..g {
        if i % 64 == 0 {
            word = lanes.bits((i / 64) as u64);
        }
        out.push(if (word >> (i % 64)) & 1 == 1 { 1.0 } else { -1.0 });
    }
    out
}
