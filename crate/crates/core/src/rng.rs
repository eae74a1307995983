//! Portable seeded pseudo-randomness.
//!
//! The generator is xoshiro256** (Blackman & Vigna), with its 256-bit state
//! expanded from the 64-bit seed by four successive SplitMix64 outputs. Every
//! derived draw (floats, bounded integers, normals, shuffles) is defined in
//! terms of `next_u64` below, so a seed reproduces the same stream on any
//! platform and in any language that implements the same steps.
//!
//! Child generators for parallel or independent sub-tasks are derived with
//! [`SeededRng::child_seed`]: `mix(parent_seed ^ mix(stream_index + GOLDEN))`,
//! where `mix` is the SplitMix64 finalizer.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    state: [u64; 4],
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut state = [0u64; 4];
        for slot in &mut state {
            sm = sm.wrapping_add(GOLDEN);
            *slot = splitmix64_mix(sm);
        }
        Self {
            seed,
            state,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Seed of the `stream`-th child of a generator seeded with `parent`.
    pub fn child_seed(parent: u64, stream: u64) -> u64 {
        splitmix64_mix(parent ^ splitmix64_mix(stream.wrapping_add(GOLDEN)))
    }

    /// Independent generator for sub-task `stream`, derived from this
    /// generator's seed (not its current position).
    pub fn child(&self, stream: u64) -> Self {
        Self::new(Self::child_seed(self.seed, stream))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Unbiased uniform integer in `[0, n)` (Lemire's multiply-and-reject).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        self.below(n as u64) as usize
    }

    /// Standard normal via the Box-Muller transform; the second variate of
    /// each pair is cached for the next call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(radius * libm::sin(theta));
        radius * libm::cos(theta)
    }

    /// Fisher-Yates shuffle, walking from the end of the slice.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> alloc::vec::Vec<usize> {
        let mut p: alloc::vec::Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
