//! Counter-based deterministic random stream.
//!
//! Every draw is a pure function of `(seed, counter)`, so streams can be
//! split, checkpointed and replayed exactly: serialize the two u64 fields,
//! restore them, and the sequence continues bit-for-bit.

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

/// One splitmix64 output for the given state.
fn splitmix(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    /// Restore a stream from serialized state.
    pub fn from_state(seed: u64, counter: u64) -> Self {
        RngStream { seed, counter }
    }

    pub fn state(&self) -> (u64, u64) {
        (self.seed, self.counter)
    }

    /// Independent stream derived from this stream's seed and a tag.
    /// Does not consume from `self`.
    pub fn substream(&self, tag: u64) -> RngStream {
        RngStream {
            seed: splitmix(self.seed ^ splitmix(tag)),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let x = splitmix(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter += 1;
        x
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn uniform_usize(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw (Box-Muller, cosine branch). Consumes exactly
    /// two counter steps so the stream state stays a pure function of the
    /// number of draws.
    pub fn normal(&mut self) -> f64 {
        let mut u1 = self.uniform();
        let u2 = self.uniform();
        if u1 <= 0.0 {
            u1 = f64::MIN_POSITIVE;
        }
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fill an f64 buffer with standard normal draws.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }
}
