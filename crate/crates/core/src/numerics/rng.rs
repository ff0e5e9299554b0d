//! Deterministic pseudo-random numbers.
//!
//! The generator is xoshiro256** (Blackman & Vigna) with its 256-bit state
//! filled by four successive outputs of SplitMix64 started at the seed. Both
//! algorithms use only wrapping 64-bit integer arithmetic, so a seed produces
//! the same stream on every platform.
//!
//! Derived draws:
//! - `next_f64`: top 53 bits of `next_u64` scaled by 2^-53, in [0, 1).
//! - `below(n)`: `(next_u64 as u128 * n) >> 64` (multiply-high, no rejection).
//! - `normal`: Box-Muller on two `next_f64` draws, cosine branch only; one
//!   normal consumes exactly two `u64`s.
//!
//! Test vectors (seed 0, first four `next_u64`):
//! `0x99ec5f36cb75f2b4, 0xbf6e1f784956452a, 0x1a5f849d4933e6e0, 0x6aa594f1262d2d2c`.

use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    s: [u64; 4],
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { seed, s }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this generator's seed and `stream`.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut sm = self.seed ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03);
        Rng::new(splitmix64(&mut sm))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<V>(&mut self, items: &mut [V]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn normal_tensor<T: Real>(&mut self, dims: impl Into<Vec<usize>>, std: f64) -> Tensor<T> {
        Tensor::from_fn(dims, |_| T::lit(std * self.normal()))
    }

    pub fn uniform_tensor<T: Real>(&mut self, dims: impl Into<Vec<usize>>, lo: f64, hi: f64) -> Tensor<T> {
        Tensor::from_fn(dims, |_| T::lit(self.uniform(lo, hi)))
    }

    /// Unit vector drawn uniformly from the sphere in `dim` dimensions.
    pub fn unit_vector<T: Real>(&mut self, dim: usize) -> Vec<T> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| T::lit(x / norm)).collect();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_vector() {
        // SplitMix64 started at 1234567, reference values from the published C code.
        let mut s = 1234567u64;
        assert_eq!(splitmix64(&mut s), 6457827717110365317);
        assert_eq!(splitmix64(&mut s), 3203168211198807973);
        assert_eq!(splitmix64(&mut s), 9817491932198370423);
    }

    #[test]
    fn golden_first_sixteen_values() {
        // Frozen from an independent Python transcription of the two algorithms.
        let expected: [u64; 16] = [
            1546998764402558742,
            6990951692964543102,
            12544586762248559009,
            17057574109182124193,
            18295552978065317476,
            14199186830065750584,
            13267978908934200754,
            15679888225317814407,
            14044878350692344958,
            10760895422300929085,
            12589033428110817649,
            5362058279183681893,
            14776290213336893110,
            5928998142081247042,
            13118401031821625293,
            16191947441114085370,
        ];
        let mut rng = Rng::new(42);
        let got: Vec<u64> = (0..16).map(|_| rng.next_u64()).collect();
        assert_eq!(got, expected);

        let mut zero = Rng::new(0);
        assert_eq!(zero.next_u64(), 0x99ec_5f36_cb75_f2b4);
        assert_eq!(zero.next_u64(), 0xbf6e_1f78_4956_452a);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = Rng::new(3);
        for n in 1..50 {
            for _ in 0..20 {
                assert!(rng.below(n) < n);
            }
        }
    }

    #[test]
    fn uniform_moments() {
        let mut rng = Rng::new(11);
        let n = 100_000;
        let mean = (0..n).map(|_| rng.next_f64()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let mut rng = Rng::new(5);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn fork_streams_differ() {
        let base = Rng::new(9);
        assert_ne!(base.fork(1).next_u64(), base.fork(2).next_u64());
        assert_eq!(base.fork(1).next_u64(), base.fork(1).next_u64());
    }

    #[test]
    fn unit_vectors_have_unit_norm() {
        let mut rng = Rng::new(1);
        let v: Vec<f64> = rng.unit_vector(17);
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}
