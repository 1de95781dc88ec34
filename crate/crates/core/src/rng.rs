//! Seeded random streams. Each consumer draws from its own ChaCha stream so
//! that adding or removing one consumer never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init(u8),
    Dropout(u8),
    Latent,
    Interpolation,
    Shuffle,
    ProposerShuffle,
    Holdout,
    /// Inference draw `k`; streams above `DRAW_BASE` are reserved for draws.
    Draw(u64),
}

const DRAW_BASE: u64 = 1 << 32;

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init(r) => 0x100 + r as u64,
            Stream::Dropout(r) => 0x200 + r as u64,
            Stream::Latent => 0x300,
            Stream::Interpolation => 0x301,
            Stream::Shuffle => 0x302,
            Stream::ProposerShuffle => 0x303,
            Stream::Holdout => 0x304,
            Stream::Draw(k) => DRAW_BASE + k,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
