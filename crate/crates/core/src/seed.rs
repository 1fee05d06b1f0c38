//! Named random substreams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_update(FNV_OFFSET, bytes)
}

pub(crate) fn fnv1a64_update(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Seed for substream `name`/`index` of `master`.
pub fn derive(master: u64, name: &str, index: u64) -> u64 {
    let mut h = fnv1a64_update(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a64_update(h, name.as_bytes());
    h = fnv1a64_update(h, &[0xff]);
    fnv1a64_update(h, &index.to_le_bytes())
}

pub fn stream(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, name, index))
}
