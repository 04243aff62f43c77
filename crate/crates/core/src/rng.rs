//! Seeded, splittable randomness.
//!
//! Every stochastic operation takes a [`Rng`]. Child streams are derived from
//! `(seed, index)` by a SplitMix64 mix, so sweep workers can own independent
//! streams without coordinating.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha20Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream determined only by this stream's seed and `index`.
    /// Drawing from the parent does not change the children.
    pub fn fork(&self, index: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits in [0, 1)
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        rand::Rng::random_range(&mut self.inner, 0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform direction on the unit sphere in `dim` dimensions.
    pub fn unit_sphere(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v = self.normal_vec(dim);
            let n = crate::linalg::norm(&v);
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    /// Uniform point in the closed unit ball.
    pub fn unit_ball(&mut self, dim: usize) -> Vec<f64> {
        let r = self.uniform().powf(1.0 / dim as f64);
        self.unit_sphere(dim).into_iter().map(|x| x * r).collect()
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.index(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(11);
        let mut b = Rng::new(11);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn forks_are_independent_of_parent_draws() {
        let mut a = Rng::new(3);
        let c1 = a.fork(5);
        a.normal();
        let c2 = a.fork(5);
        assert_eq!(c1.seed(), c2.seed());
        assert_ne!(a.fork(5).seed(), a.fork(6).seed());
    }

    #[test]
    fn ball_and_sphere_norms() {
        let mut r = Rng::new(0);
        for _ in 0..100 {
            let s = r.unit_sphere(7);
            assert!((crate::linalg::norm(&s) - 1.0).abs() < 1e-12);
            let b = r.unit_ball(7);
            assert!(crate::linalg::norm(&b) <= 1.0 + 1e-12);
        }
    }
}
