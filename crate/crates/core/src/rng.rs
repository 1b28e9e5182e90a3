//! Deterministic substreams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(master_seed, client_id, round, purpose)`. Streams for different
//! clients never share state, so per-client work can run on any thread
//! in any order and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Generator handed out for a single substream.
pub type StreamRng = ChaCha12Rng;

/// What a substream is used for. Distinct purposes never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Prior,
    Data,
    Label,
    Mechanism,
    Cluster,
    Sampling,
    Batch,
    Noise,
    Init,
    Split,
    Custom(u32),
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Prior => 1,
            Purpose::Data => 2,
            Purpose::Label => 3,
            Purpose::Mechanism => 4,
            Purpose::Cluster => 5,
            Purpose::Sampling => 6,
            Purpose::Batch => 7,
            Purpose::Noise => 8,
            Purpose::Init => 9,
            Purpose::Split => 10,
            Purpose::Custom(c) => 0x1_0000_0000 | u64::from(c),
        }
    }
}

/// Client id reserved for server-side and population-level streams.
pub const SERVER: u64 = u64::MAX;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed plus the substream derivation rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngContract {
    master_seed: u64,
}

impl RngContract {
    pub const fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// 64-bit key for a tuple; distinct tuples give distinct keys with
    /// overwhelming probability.
    pub fn key(&self, client_id: u64, round: u64, purpose: Purpose) -> u64 {
        let mut h = splitmix64(self.master_seed ^ 0x5EED_5EED_5EED_5EED);
        h = splitmix64(h ^ client_id);
        h = splitmix64(h ^ round.rotate_left(29) ^ 0xA5A5_0000_0000_A5A5);
        splitmix64(h ^ purpose.code().wrapping_mul(GOLDEN))
    }

    pub fn stream(&self, client_id: u64, round: u64, purpose: Purpose) -> StreamRng {
        let mut state = self.key(client_id, round, purpose);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha12Rng::from_seed(seed)
    }

    /// Independent contract for a nested experiment (e.g. one Monte Carlo
    /// replicate).
    pub fn derive(&self, salt: u64) -> RngContract {
        RngContract::new(splitmix64(self.master_seed ^ splitmix64(salt ^ 0xD1B5_4A32_D192_ED03)))
    }
}
