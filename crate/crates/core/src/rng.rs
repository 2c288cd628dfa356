//! Seed derivation.
//!
//! All randomness flows from one root seed. Each consumer asks for a stream
//! keyed by a purpose tag plus up to two integer coordinates, so editing one
//! consumer never shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named purposes for substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Weather,
    Temperature,
    Action,
    Init,
    Shuffle,
    TeacherForcing,
    Decode,
    Engine,
    Replay,
    GradCheck,
    Custom(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Weather => 0x5745_4154,
            Purpose::Temperature => 0x5445_4d50,
            Purpose::Action => 0x4143_5449,
            Purpose::Init => 0x494e_4954,
            Purpose::Shuffle => 0x5348_5546,
            Purpose::TeacherForcing => 0x5446_4f52,
            Purpose::Decode => 0x4445_434f,
            Purpose::Engine => 0x454e_4749,
            Purpose::Replay => 0x5245_504c,
            Purpose::GradCheck => 0x4752_4144,
            Purpose::Custom(t) => t ^ 0xc0ff_ee00_0000_0000,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes the root seed with a purpose and two coordinates into a child seed.
pub fn derive_seed(root: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(root);
    h = splitmix64(h ^ purpose.tag());
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

/// Child seed for a named subcommand stream (`gen`, `train`, `engine`, `eval`).
pub fn named_seed(root: u64, name: &str) -> u64 {
    let tag = name
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    derive_seed(root, Purpose::Custom(tag), 0, 0)
}

pub fn stream(root: u64, purpose: Purpose, a: u64, b: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, purpose, a, b))
}
