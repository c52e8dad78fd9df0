//! Deterministic pseudo-random numbers.
//!
//! Everything stochastic in this crate (augmentation draws, dropout masks,
//! weight init, shuffles, splits) goes through [`DetRng`] so that a run is a
//! pure function of its seeds. The generator is splitmix64: tiny, fast, and
//! identical on every platform. Counter-based construction
//! ([`DetRng::from_seed_index`]) gives every (seed, index) pair its own
//! independent stream, so draws can be replayed out of order.

/// Splitmix64 generator with a 64-bit state.
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng { state: mix(seed) }
    }

    /// Independent stream for draw `index` under `seed`.
    pub fn from_seed_index(seed: u64, index: u64) -> Self {
        DetRng {
            state: mix(mix(seed) ^ index.wrapping_mul(GOLDEN)),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Multiply-shift, no rejection loop.
    pub fn next_below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }

    /// Standard normal via Box-Muller (two uniforms per call, no caching,
    /// so the stream position is independent of call parity).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            slice.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_replayable() {
        let a: Vec<u64> = (0..8).map(|i| DetRng::from_seed_index(7, i).next_u64()).collect();
        let b: Vec<u64> = (0..8).map(|i| DetRng::from_seed_index(7, i).next_u64()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_indices_give_distinct_streams() {
        let a = DetRng::from_seed_index(7, 0).next_u64();
        let b = DetRng::from_seed_index(7, 1).next_u64();
        assert_ne!(a, b);
    }

    #[test]
    fn uniform_stays_in_unit_interval() {
        let mut rng = DetRng::new(3);
        for _ in 0..10_000 {
            let v = rng.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn normal_has_sane_moments() {
        let mut rng = DetRng::new(11);
        let n = 100_000;
        let samples: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }
}
