//! Named, independent random streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Augment,
    Channel,
    Noise,
    Init,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Data => "data",
            Stream::Augment => "augment",
            Stream::Channel => "channel",
            Stream::Noise => "noise",
            Stream::Init => "init",
        }
    }
}

/// Seed a generator from `(master, label)`; distinct labels give unrelated streams.
pub fn derive_rng(master: u64, label: &str) -> Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    Rng::from_seed(h.finalize().into())
}

/// Derive a child seed, e.g. for the i-th training repeat of a sweep.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(b"/seed/");
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub struct SeedStreams {
    pub data: Rng,
    pub augment: Rng,
    pub channel: Rng,
    pub noise: Rng,
    pub init: Rng,
}

pub fn seed_streams(master_seed: u64) -> SeedStreams {
    let s = |st: Stream| derive_rng(master_seed, st.name());
    SeedStreams {
        data: s(Stream::Data),
        augment: s(Stream::Augment),
        channel: s(Stream::Channel),
        noise: s(Stream::Noise),
        init: s(Stream::Init),
    }
}
