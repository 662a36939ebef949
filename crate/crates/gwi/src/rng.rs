//! Counter-based splittable random number generator.
//!
//! Every stream is keyed by a master seed plus a list of label words
//! (replication index, step index, salt constants). Distinct labels give
//! statistically independent streams, so replications and steps can be
//! generated in any order, in parallel, with bitwise reproducible results.
//!
//! The core is the SplitMix64 finalizer; a stream is the SplitMix64 sequence
//! started from the hashed label.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream generator keyed by `(seed, labels...)`.
#[derive(Debug, Clone)]
pub struct StreamRng {
    state: u64,
    spare_normal: Option<f64>,
}

impl StreamRng {
    /// Derive a stream from a master seed and label words.
    pub fn from_label(seed: u64, labels: &[u64]) -> Self {
        let mut state = mix64(seed ^ GOLDEN);
        for &w in labels {
            state = mix64(state ^ mix64(w.wrapping_add(GOLDEN)));
        }
        StreamRng {
            state,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal draw (Box-Muller with cached spare).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0);
        let u2 = self.uniform();
        let mag = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare_normal = Some(mag * s);
        mag * c
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        (StreamRng::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        StreamRng::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand::rand_core::impls::fill_bytes_via_next(self, dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_labels_identical_streams() {
        let mut a = StreamRng::from_label(42, &[1, 2, 3]);
        let mut b = StreamRng::from_label(42, &[1, 2, 3]);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_labels_differ() {
        let mut a = StreamRng::from_label(42, &[0]);
        let mut b = StreamRng::from_label(42, &[1]);
        let va: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let vb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(va, vb);
    }

    #[test]
    fn normal_moments() {
        let mut rng = StreamRng::from_label(7, &[]);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = StreamRng::from_label(9, &[4]);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
