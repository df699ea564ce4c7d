//! Per-component random streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Env = 2,
    Sampling = 3,
    Noise = 4,
    Eval = 5,
}

/// ChaCha stream `stream` of the master key.
pub fn stream(master: u64, which: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(master);
    r.set_stream(which as u64);
    r
}

/// Position of a ChaCha generator, enough to restore it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position split into (high, low).
    pub word_pos: (u64, u64),
}

impl RngState {
    pub fn capture(r: &ChaCha8Rng) -> Self {
        let pos = r.get_word_pos();
        RngState {
            seed: r.get_seed(),
            stream: r.get_stream(),
            word_pos: ((pos >> 64) as u64, pos as u64),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(((self.word_pos.0 as u128) << 64) | self.word_pos.1 as u128);
        r
    }
}

/// SplitMix64 finaliser, for deriving child seeds from a parent value.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
