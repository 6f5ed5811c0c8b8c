//! Named random streams derived from one master seed.
//!
//! Each stream has a base seed `base = mix(master ^ TAG)`, overridable on its
//! own. Per-use seeds hash the base with up to three counters:
//! `mix(mix(mix(base + a) + b) + c)`, where `mix` is the SplitMix64 finalizer.
//! The counters are documented on each accessor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn chain(base: u64, a: u64, b: u64, c: u64) -> u64 {
    mix(mix(mix(base.wrapping_add(a)).wrapping_add(b)).wrapping_add(c))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Partition = 2,
    Selection = 3,
    Batch = 4,
    Poison = 5,
    Noise = 6,
}

pub fn stream_base(master: u64, stream: Stream) -> u64 {
    mix(master ^ (stream as u64).wrapping_mul(GOLDEN))
}

/// Resolved base seed of every stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub init: u64,
    pub partition: u64,
    pub selection: u64,
    pub batch: u64,
    pub poison: u64,
    pub noise: u64,
}

impl SeedPlan {
    pub fn from_master(master: u64) -> Self {
        SeedPlan {
            master,
            init: stream_base(master, Stream::Init),
            partition: stream_base(master, Stream::Partition),
            selection: stream_base(master, Stream::Selection),
            batch: stream_base(master, Stream::Batch),
            poison: stream_base(master, Stream::Poison),
            noise: stream_base(master, Stream::Noise),
        }
    }

    /// Client sampling in round `round`: counters `(round, 0, 0)`.
    pub fn selection_rng(&self, round: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(chain(self.selection, round as u64, 0, 0))
    }

    /// Shuffle of `client`'s shard in local epoch `epoch` of `round`:
    /// counters `(client, round, epoch)`.
    pub fn batch_seed(&self, client: usize, round: usize, epoch: usize) -> u64 {
        chain(self.batch, client as u64, round as u64, epoch as u64)
    }

    /// Choice of poisoned samples by `client` in `round`: `(client, round, 0)`.
    pub fn poison_rng(&self, client: usize, round: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(chain(self.poison, client as u64, round as u64, 0))
    }

    /// Privacy noise on `client`'s update in `round`: `(round, client, 0)`.
    pub fn noise_rng(&self, round: usize, client: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(chain(self.noise, round as u64, client as u64, 0))
    }
}
