//! Counter-based random streams.
//!
//! Every random draw in a run is taken from a stream keyed by
//! `(seed, generation, role, index)`, so the order in which work items are
//! scheduled can never change what they draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Distinct roles never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    PromptSelection = 1,
    MixPermutation = 2,
    Synthesis = 3,
    DynamicGeneration = 4,
    AnswerGeneration = 5,
    ExemplarSplit = 6,
    Resample = 7,
    World = 8,
    Oversample = 9,
    Remote = 10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngKey {
    pub seed: u64,
    pub generation: u64,
    pub role: Role,
    pub index: u64,
}

impl RngKey {
    pub fn new(seed: u64, generation: u64, role: Role, index: u64) -> Self {
        Self {
            seed,
            generation,
            role,
            index,
        }
    }

    pub fn with_index(self, index: u64) -> Self {
        Self { index, ..self }
    }

    /// A single 64-bit value summarising the key, used e.g. as a remote `seed`.
    pub fn fold(&self) -> u64 {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ self.generation);
        h = splitmix64(h ^ self.role as u64);
        splitmix64(h ^ self.index)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut state = self.fold();
        for chunk in seed.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
