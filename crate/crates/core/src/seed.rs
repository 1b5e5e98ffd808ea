//! Stable seed derivation.
//!
//! Every random stream in the harness is keyed by a 64-bit value derived here
//! from the master seed and a few labels. The mixing functions are fixed
//! (FNV-1a over the label bytes, then the SplitMix64 finalizer) so derived
//! seeds do not change between releases or platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A labelled component of a derived seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedPart<'a> {
    Int(u64),
    Label(&'a str),
}

impl From<u64> for SeedPart<'_> {
    fn from(v: u64) -> Self {
        SeedPart::Int(v)
    }
}

impl<'a> From<&'a str> for SeedPart<'a> {
    fn from(v: &'a str) -> Self {
        SeedPart::Label(v)
    }
}

/// Hashes an ordered list of parts into a seed.
pub fn derive_seed(parts: &[SeedPart<'_>]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    for part in parts {
        match part {
            SeedPart::Int(v) => {
                feed(&[0x01]);
                feed(&v.to_le_bytes());
            }
            SeedPart::Label(s) => {
                feed(&[0x02]);
                feed(&(s.len() as u64).to_le_bytes());
                feed(s.as_bytes());
            }
        }
    }
    mix64(h)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
