//! Counter-based pseudo-random numbers.
//!
//! Everything random in this crate (coefficient sampling, weight init,
//! dropout masks, noise) is derived from a 64-bit seed through the
//! SplitMix64 finalizer, either as a stateless counter lookup or as a
//! small sequential stream. The same seed yields the same values on
//! every run and at any thread count, and a stream's state is a single
//! `u64` that snapshots exactly.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output mixing.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sequential SplitMix64 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { state: seed }
    }

    /// Derives an independent stream from a seed and a path of domain
    /// words (layer index, sample index, salt, ...). Same path, same
    /// stream.
    pub fn substream(seed: u64, path: &[u64]) -> Self {
        let mut state = mix64(seed ^ GOLDEN);
        for &w in path {
            state = mix64(state ^ w.wrapping_add(GOLDEN));
        }
        Stream { state }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn restore(state: u64) -> Self {
        Stream { state }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform on the open interval (0, 1), symmetric about 1/2.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform on the open interval (-half_range, half_range).
    #[inline]
    pub fn next_symmetric(&mut self, half_range: f64) -> f64 {
        half_range * (2.0 * self.next_f64() - 1.0)
    }

    /// Uniform integer in [0, bound) by rejection, for unbiased shuffles.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % bound;
            }
        }
    }

    /// Fisher-Yates permutation of 0..len.
    pub fn permutation(&mut self, len: usize) -> Vec<u32> {
        let mut perm: Vec<u32> = (0..len as u32).collect();
        for i in (1..len).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            perm.swap(i, j);
        }
        perm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_is_deterministic() {
        let mut a = Stream::new(42);
        let mut b = Stream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn substream_paths_differ() {
        let a = Stream::substream(7, &[0, 1]).next_u64_once();
        let b = Stream::substream(7, &[1, 0]).next_u64_once();
        assert_ne!(a, b);
    }

    #[test]
    fn f64_strictly_inside_unit_interval() {
        let mut s = Stream::new(123);
        for _ in 0..10_000 {
            let x = s.next_f64();
            assert!(x > 0.0 && x < 1.0);
        }
    }

    #[test]
    fn symmetric_draws_stay_open() {
        let mut s = Stream::new(9);
        for _ in 0..10_000 {
            let x = s.next_symmetric(1.0);
            assert!(x > -1.0 && x < 1.0);
        }
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut s = Stream::new(5);
        let p = s.permutation(100);
        let mut seen = vec![false; 100];
        for &i in &p {
            assert!(!seen[i as usize]);
            seen[i as usize] = true;
        }
    }

    impl Stream {
        fn next_u64_once(mut self) -> u64 {
            self.next_u64()
        }
    }
}
