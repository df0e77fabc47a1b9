//! Counter-based random streams.
//!
//! Draw `j` of stream `s` under seed `q` is a pure function of `(q, s, j)`:
//! every draw occupies a fixed window of ChaCha20 keystream words, so a
//! cursor can be opened at any index without replaying earlier draws.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::std_normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// A child stream under the same seed, labelled deterministically.
    pub fn derive(&self, label: u64) -> Self {
        Self { seed: self.seed, stream_id: splitmix64(self.stream_id ^ splitmix64(label)) }
    }

    /// Cursor positioned at draw `index`, each draw consuming `width` uniforms.
    pub fn cursor(&self, index: u64, width: usize) -> DrawCursor {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        // two 32-bit words per u64
        rng.set_word_pos(index as u128 * width as u128 * 2);
        DrawCursor { rng, width }
    }
}

pub struct DrawCursor {
    rng: ChaCha20Rng,
    width: usize,
}

impl DrawCursor {
    pub fn width(&self) -> usize {
        self.width
    }

    /// Fills `out` (length `width`) with uniforms in the open interval (0, 1).
    pub fn next_uniforms(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.width);
        for u in out.iter_mut() {
            let bits = self.rng.next_u64() >> 11;
            *u = (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        }
    }

    /// Fills `out` with standard normals by inverse transform.
    pub fn next_normals(&mut self, out: &mut [f64]) -> Result<()> {
        self.next_uniforms(out);
        for v in out.iter_mut() {
            *v = std_normal_quantile(*v)?;
        }
        Ok(())
    }
}
