//! Counter-based random streams.
//!
//! Every random number used during injection is a pure function of
//! `(seed, stage, pixel index, draw counter)`. Nothing depends on iteration
//! order or on how pixels are distributed over worker threads.

use rand::RngCore;
use sha2::{Digest, Sha256};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer (Stafford variant 13).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Which noise stage a stream feeds. The tag keeps quantum and electronic
/// draws disjoint even when they share a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Quantum,
    Electronic,
    /// Free-form tag for callers outside the injection pipeline (tests, validation).
    Custom(u64),
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Quantum => 0x7175_616e_7475_6d00,
            Stage::Electronic => 0x656c_6563_7472_6f6e,
            Stage::Custom(t) => mix64(t ^ 0x6375_7374_6f6d_0000),
        }
    }
}

/// A family of independent per-pixel streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64, stage: Stage) -> Self {
        StreamKey(mix64(mix64(seed) ^ stage.tag()))
    }

    pub fn pixel(&self, index: u64) -> PixelStream {
        PixelStream {
            key: mix64(self.0 ^ mix64(index.wrapping_add(GOLDEN_GAMMA))),
            counter: 0,
        }
    }
}

/// Stream for a single pixel: output `k` is `mix64(key + (k + 1) * gamma)`.
#[derive(Debug, Clone)]
pub struct PixelStream {
    key: u64,
    counter: u64,
}

impl RngCore for PixelStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Seed for one (image, ladder point) cell of a sweep. Adding points or images
/// never changes the seed of an existing cell.
pub fn derive_seed(global_seed: u64, image_id: &str, s_q: f64, s_e: f64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"noiseforge/cell/v1");
    h.update(global_seed.to_le_bytes());
    h.update((image_id.len() as u64).to_le_bytes());
    h.update(image_id.as_bytes());
    h.update(s_q.to_bits().to_le_bytes());
    h.update(s_e.to_bits().to_le_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(first)
}
