//! Counter-based random streams.
//!
//! Every draw is a pure function of `(key, counter)`: element `i` of a stream
//! is the SplitMix64 output function applied to `key + (i + 1) * GOLDEN`, which
//! is exactly the `i`-th output of a SplitMix64 generator seeded with `key`.
//! Nothing is stateful, so any element can be regenerated independently and
//! noise fields are identical regardless of traversal order or thread count.
//!
//! Stream keys are derived from a 64-bit seed, a domain constant and an item
//! label (usually an image id) hashed with FNV-1a-64:
//!
//! ```text
//! key = mix64(mix64(seed ^ domain) ^ fnv1a64(item))
//! ```
//!
//! Uniforms take the top 53 bits; normals use Box-Muller on consecutive
//! uniform pairs. Reference vectors live in `tests/fixtures/rng_vectors.json`.

pub const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Domain separators for the streams used across the toolkit.
pub mod domain {
    pub const STRENGTH: u64 = 0x5354_5245_4e47_5448;
    pub const NOISE: u64 = 0x4e4f_4953_4500_0000;
    pub const PERMUTATION: u64 = 0x5045_524d_5554_4500;
    pub const SCENE: u64 = 0x5343_454e_4500_0000;
    pub const MODEL: u64 = 0x4d4f_4445_4c00_0000;
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub const fn from_key(key: u64) -> Self {
        Stream { key }
    }

    pub fn derive(seed: u64, domain: u64, item: &str) -> Self {
        Stream {
            key: mix64(mix64(seed ^ domain) ^ fnv1a64(item.as_bytes())),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Child stream, e.g. one per model inside a study.
    pub fn fork(&self, label: &str) -> Self {
        Stream {
            key: mix64(self.key ^ fnv1a64(label.as_bytes())),
        }
    }

    #[inline]
    pub fn raw(&self, counter: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)),
        )
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.raw(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal. Elements `2j` and `2j + 1` share one Box-Muller pair.
    #[inline]
    pub fn normal(&self, counter: u64) -> f64 {
        let pair = counter & !1;
        let u1 = 1.0 - self.uniform(pair);
        let u2 = self.uniform(pair + 1);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        if counter & 1 == 0 {
            r * theta.cos()
        } else {
            r * theta.sin()
        }
    }

    /// Uniform integer in `[0, n)` via multiply-shift.
    #[inline]
    pub fn below(&self, counter: u64, n: u64) -> u64 {
        ((u128::from(self.raw(counter)) * u128::from(n)) >> 64) as u64
    }
}

/// Sequential view over a [`Stream`].
#[derive(Debug, Clone)]
pub struct Cursor {
    stream: Stream,
    next: u64,
}

impl Cursor {
    pub fn new(stream: Stream) -> Self {
        Cursor { stream, next: 0 }
    }

    pub fn uniform(&mut self) -> f64 {
        let v = self.stream.uniform(self.next);
        self.next += 1;
        v
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        let v = self.stream.below(self.next, n);
        self.next += 1;
        v
    }

    pub fn normal(&mut self) -> f64 {
        // keep pairs aligned so Cursor and Stream::normal agree
        let v = self.stream.normal(self.next);
        self.next += 1;
        v
    }
}
