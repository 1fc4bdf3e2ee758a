use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Seeded random stream. The same seed and the same call sequence give the
/// same draws bit for bit.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    inner: ChaCha12Rng,
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        RngHandle {
            seed,
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream, derived from the seed only (not from the
    /// current position of this stream).
    pub fn split(&self, stream: u64) -> RngHandle {
        RngHandle::new(split_seed(self.seed, stream))
    }
}

/// Derive the seed of child stream `stream` from a master seed.
///
/// `split_seed(seed, k) = splitmix64(seed ^ splitmix64(k + 1))`.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(1)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
