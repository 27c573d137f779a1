//! Seeded random streams.
//!
//! Every stochastic step in the toolkit draws from an [`RngStream`]. The
//! generator is ChaCha8 (the `rand_chacha` 0.3 implementation, which is
//! platform independent). Uniform floats take the top 53 bits of each
//! 64-bit word, and Gaussian draws use Box–Muller on exactly two uniforms
//! per output pair, so the number of words consumed by a call depends only
//! on its arguments.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Name and version of the generator, recorded in checkpoints and reports.
pub const RNG_ALGORITHM: &str = "chacha8-rand_chacha0.3/u53-uniform/box-muller-v1";

/// SplitMix64 finalizer; used to derive independent child seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of words into one seed. Order matters.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Stable 64-bit hash of a short label (FNV-1a), for mixing names into seeds.
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Single-owner deterministic random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A fresh stream whose seed is derived from `base` and `parts`.
    pub fn derived(base: u64, parts: &[u64]) -> Self {
        Self::new(derive_seed(base, parts))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// One uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `n` uniform draws in [0, 1).
    pub fn uniform_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform()).collect()
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() needs a non-empty range");
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// One Box–Muller pair of standard normals.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// `n` draws from N(mu, sigma²). Consumes `2·ceil(n/2)` uniforms.
    pub fn gaussian_vec(&mut self, n: usize, mu: f64, sigma: f64) -> Result<Vec<f64>> {
        if !(sigma >= 0.0) {
            return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
        }
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            let (a, b) = self.normal_pair();
            out.push(mu + sigma * a);
            out.push(mu + sigma * b);
        }
        out.truncate(n);
        Ok(out)
    }

    /// Gamma(shape, 1). Exponential for shape 1, Marsaglia–Tsang otherwise
    /// (with the `U^(1/shape)` boost below 1).
    pub fn gamma(&mut self, shape: f64) -> f64 {
        debug_assert!(shape > 0.0);
        if shape == 1.0 {
            return -(1.0 - self.uniform()).ln();
        }
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0);
            let u = 1.0 - self.uniform();
            return g * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let (x, _) = self.normal_pair();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = 1.0 - self.uniform();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return d * v;
            }
        }
    }

    /// Beta(a, b) via two Gamma draws.
    pub fn beta(&mut self, a: f64, b: f64) -> f64 {
        let x = self.gamma(a);
        let y = self.gamma(b);
        x / (x + y)
    }

    /// Symmetric Dirichlet(alpha·1_k) via normalized Gamma draws.
    pub fn dirichlet(&mut self, alpha: f64, k: usize) -> Vec<f64> {
        let draws: Vec<f64> = (0..k).map(|_| self.gamma(alpha)).collect();
        let total: f64 = draws.iter().sum();
        draws.into_iter().map(|g| g / total).collect()
    }

    /// Poisson(lambda) by inverse-transform sampling from one uniform.
    pub fn poisson(&mut self, lambda: f64) -> u32 {
        let u = self.uniform();
        if lambda <= 0.0 {
            return 0;
        }
        let mut k = 0u32;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        while u >= cdf {
            k += 1;
            p *= lambda / f64::from(k);
            cdf += p;
            // The tail mass below f64 resolution is unreachable.
            if p < 1e-300 && f64::from(k) > lambda {
                break;
            }
        }
        k
    }
}

/// `rng_uniform`: `n` uniforms from a fresh stream continuation.
pub fn rng_uniform(stream: &mut RngStream, n: usize) -> Vec<f64> {
    stream.uniform_vec(n)
}

/// `rng_gaussian`: Box–Muller draws from N(mu, sigma²).
pub fn rng_gaussian(stream: &mut RngStream, n: usize, mu: f64, sigma: f64) -> Result<Vec<f64>> {
    stream.gaussian_vec(n, mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_request_is_empty() {
        assert!(rng_uniform(&mut RngStream::new(0), 0).is_empty());
    }

    #[test]
    fn identical_seeds_give_identical_draws() {
        let a = rng_uniform(&mut RngStream::new(0), 2);
        let b = rng_uniform(&mut RngStream::new(0), 2);
        assert_eq!(a, b);
        let ga = rng_gaussian(&mut RngStream::new(5), 9, 0.0, 1.0).unwrap();
        let gb = rng_gaussian(&mut RngStream::new(5), 9, 0.0, 1.0).unwrap();
        assert_eq!(
            ga.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            gb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn uniform_mean_is_near_half() {
        let v = rng_uniform(&mut RngStream::new(0), 100_000);
        assert!(v.iter().all(|&x| (0.0..1.0).contains(&x)));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn chi_square_uniformity_on_16_bins() {
        let n = 1_000_000;
        let mut bins = [0u64; 16];
        let mut s = RngStream::new(11);
        for _ in 0..n {
            bins[(s.uniform() * 16.0) as usize] += 1;
        }
        let expected = n as f64 / 16.0;
        let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // Upper 0.001 quantile of chi-square with 15 degrees of freedom.
        assert!(chi2 < 37.697, "chi2 = {chi2}");
    }

    #[test]
    fn gaussian_degenerate_and_moments() {
        let v = rng_gaussian(&mut RngStream::new(1), 7, 3.5, 0.0).unwrap();
        assert!(v.iter().all(|&x| x == 3.5));
        let v = rng_gaussian(&mut RngStream::new(0), 100_000, 0.0, 1.0).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((0.98..=1.02).contains(&var), "var {var}");
        assert!(rng_gaussian(&mut RngStream::new(0), 3, 0.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_consumes_two_uniforms_per_pair() {
        let mut a = RngStream::new(3);
        let _ = a.gaussian_vec(3, 0.0, 1.0).unwrap();
        let mut b = RngStream::new(3);
        let _ = b.uniform_vec(4);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn gamma_and_dirichlet_moments() {
        let mut s = RngStream::new(9);
        for shape in [0.5, 1.0, 2.5] {
            let n = 50_000;
            let mean = (0..n).map(|_| s.gamma(shape)).sum::<f64>() / n as f64;
            assert!(
                (mean - shape).abs() < 0.05 * shape.max(1.0),
                "shape {shape} mean {mean}"
            );
        }
        let w = s.dirichlet(1.0, 3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let b: f64 = (0..20_000).map(|_| s.beta(1.0, 1.0)).sum::<f64>() / 20_000.0;
        assert!((b - 0.5).abs() < 0.01);
    }

    #[test]
    fn poisson_mean_matches_lambda() {
        let mut s = RngStream::new(2);
        for lambda in [0.5, 4.0, 30.0, 60.0] {
            let n = 40_000;
            let mean = (0..n).map(|_| f64::from(s.poisson(lambda))).sum::<f64>() / n as f64;
            assert!((mean - lambda).abs() < 0.03 * lambda.max(1.0), "{lambda}: {mean}");
        }
    }

    #[test]
    fn derived_seeds_depend_on_every_part() {
        let a = derive_seed(1, &[2, 3]);
        assert_ne!(a, derive_seed(1, &[3, 2]));
        assert_ne!(a, derive_seed(2, &[2, 3]));
        assert_eq!(a, derive_seed(1, &[2, 3]));
    }
}
