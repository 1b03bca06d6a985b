//! Rician block-fading MIMO channel generation.
//!
//! One [`ChannelSet`] is one coherence block: per-device uplink matrices drawn
//! i.i.d. complex Gaussian with a non-zero mean (the line-of-sight component)
//! and entry variance `sigma^2`. Sampling is a pure function of
//! `(config, seed)`; per-device streams are derived child seeds, so changing
//! the device count does not reshuffle other devices' draws.

use num_complex::Complex64;

use crate::numerics::ComplexMatrix;
use crate::rng::{complex_gaussian, complex_gaussian_vec, stream_rng};
use crate::{Error, Result};

/// Static parameters of the uplink MIMO multiple-access channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    /// Number of edge devices `N`.
    pub num_devices: usize,
    /// Receive antennas at the edge server `N_r`.
    pub server_antennas: usize,
    /// Transmit antennas per device `N_t`.
    pub device_antennas: usize,
    /// Mean of each channel entry (line-of-sight component).
    pub rician_mean: Complex64,
    /// Variance of each complex channel entry.
    pub entry_variance: f64,
    /// Noise power per complex entry at the server.
    pub noise_power: f64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_devices == 0 || self.server_antennas == 0 || self.device_antennas == 0 {
            return Err(Error::InvalidArgument {
                operation: "ChannelConfig",
                detail: "device and antenna counts must be >= 1".to_string(),
            });
        }
        if !(self.entry_variance > 0.0) {
            return Err(Error::InvalidArgument {
                operation: "ChannelConfig",
                detail: format!("entry variance must be > 0, got {}", self.entry_variance),
            });
        }
        if !(self.noise_power >= 0.0) {
            return Err(Error::InvalidArgument {
                operation: "ChannelConfig",
                detail: format!("noise power must be >= 0, got {}", self.noise_power),
            });
        }
        Ok(())
    }
}

/// Per-device uplink matrices `H_n` (`N_r x N_t`) for one fading block.
/// Callers never mutate a set; a new block is a new sample.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    matrices: Vec<ComplexMatrix>,
}

impl ChannelSet {
    pub fn new(matrices: Vec<ComplexMatrix>) -> Self {
        assert!(!matrices.is_empty());
        Self { matrices }
    }

    pub fn num_devices(&self) -> usize {
        self.matrices.len()
    }

    pub fn device(&self, n: usize) -> &ComplexMatrix {
        &self.matrices[n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ComplexMatrix> {
        self.matrices.iter()
    }

    pub fn server_antennas(&self) -> usize {
        self.matrices[0].rows()
    }

    pub fn device_antennas(&self) -> usize {
        self.matrices[0].cols()
    }
}

// Stream tags keeping device draws and noise draws disjoint.
const DEVICE_STREAM: u64 = 0x01;
const NOISE_STREAM: u64 = 0x02;

/// Draws one fading block: each entry of each `H_n` i.i.d. complex Gaussian
/// with mean `rician_mean` and variance `entry_variance`.
pub fn sample_channels(config: &ChannelConfig, seed: u64) -> ChannelSet {
    let rows = config.server_antennas;
    let cols = config.device_antennas;
    let matrices = (0..config.num_devices)
        .map(|n| {
            let mut rng = stream_rng(seed, (n as u64) << 8 | DEVICE_STREAM);
            ComplexMatrix::from_fn(rows, cols, |_, _| {
                complex_gaussian(&mut rng, config.rician_mean, config.entry_variance)
            })
        })
        .collect();
    ChannelSet::new(matrices)
}

/// Additive white Gaussian noise: `len` i.i.d. zero-mean complex entries with
/// variance `noise_power` each. Zero noise power yields an exactly zero
/// vector.
pub fn sample_noise(config: &ChannelConfig, len: usize, seed: u64) -> Vec<Complex64> {
    if config.noise_power == 0.0 {
        return vec![Complex64::new(0.0, 0.0); len];
    }
    let mut rng = stream_rng(seed, NOISE_STREAM);
    complex_gaussian_vec(&mut rng, len, Complex64::new(0.0, 0.0), config.noise_power)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n: usize, rx: usize, tx: usize) -> ChannelConfig {
        ChannelConfig {
            num_devices: n,
            server_antennas: rx,
            device_antennas: tx,
            rician_mean: Complex64::new(1.0, 0.0),
            entry_variance: 1.0,
            noise_power: 1.0,
        }
    }

    #[test]
    fn sampled_shapes_match_config() {
        let set = sample_channels(&config(1, 2, 1), 9);
        assert_eq!(set.num_devices(), 1);
        assert_eq!(set.device(0).rows(), 2);
        assert_eq!(set.device(0).cols(), 1);
    }

    #[test]
    fn paper_default_shapes() {
        let cfg = config(8, 20, 4);
        let set = sample_channels(&cfg, 3);
        assert_eq!(set.num_devices(), 8);
        assert_eq!(set.server_antennas(), 20);
        assert_eq!(set.device_antennas(), 4);
        assert!(set.iter().all(|h| h.is_finite()));
    }

    #[test]
    fn entry_moments_match_rician_parameters() {
        // mu = 1, sigma^2 = 1: empirical mean within 1 +/- 0.02 and variance
        // within 1 +/- 0.05 over 1e5 entries.
        let cfg = config(4, 25, 10);
        let mut entries = Vec::new();
        let mut draw = 0u64;
        while entries.len() < 100_000 {
            let set = sample_channels(&cfg, draw);
            for h in set.iter() {
                entries.extend_from_slice(h.data());
            }
            draw += 1;
        }
        entries.truncate(100_000);
        let n = entries.len() as f64;
        let mean = entries.iter().sum::<Complex64>() / n;
        let var = entries.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n;
        assert!((mean - Complex64::new(1.0, 0.0)).norm() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn channels_reproducible_for_same_seed() {
        let cfg = config(3, 4, 2);
        let a = sample_channels(&cfg, 77);
        let b = sample_channels(&cfg, 77);
        for n in 0..3 {
            assert_eq!(a.device(n).data(), b.device(n).data());
        }
    }

    #[test]
    fn device_streams_stable_under_device_count_change() {
        let small = sample_channels(&config(2, 4, 2), 5);
        let large = sample_channels(&config(5, 4, 2), 5);
        for n in 0..2 {
            assert_eq!(small.device(n).data(), large.device(n).data());
        }
    }

    #[test]
    fn devices_are_uncorrelated() {
        let cfg = config(2, 2, 2);
        let draws = 10_000;
        let mut h1 = Vec::with_capacity(draws);
        let mut h2 = Vec::with_capacity(draws);
        for k in 0..draws {
            let set = sample_channels(&cfg, k as u64);
            h1.push(set.device(0)[(0, 0)]);
            h2.push(set.device(1)[(0, 0)]);
        }
        let n = draws as f64;
        let m1 = h1.iter().sum::<Complex64>() / n;
        let m2 = h2.iter().sum::<Complex64>() / n;
        let cov: Complex64 =
            h1.iter().zip(&h2).map(|(a, b)| (a - m1) * (b - m2).conj()).sum::<Complex64>() / n;
        let v1 = h1.iter().map(|z| (z - m1).norm_sqr()).sum::<f64>() / n;
        let v2 = h2.iter().map(|z| (z - m2).norm_sqr()).sum::<f64>() / n;
        let corr = cov.norm() / (v1 * v2).sqrt();
        assert!(corr < 0.05, "cross-device correlation {corr}");
    }

    #[test]
    fn zero_noise_power_gives_zero_vector() {
        let mut cfg = config(1, 2, 1);
        cfg.noise_power = 0.0;
        let noise = sample_noise(&cfg, 16, 4);
        assert!(noise.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn noise_variance_matches_config() {
        let cfg = config(1, 2, 1);
        let noise = sample_noise(&cfg, 100_000, 11);
        let var = noise.iter().map(|z| z.norm_sqr()).sum::<f64>() / noise.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "noise variance {var}");
    }

    #[test]
    fn noise_deterministic_given_seed() {
        let cfg = config(1, 2, 1);
        assert_eq!(sample_noise(&cfg, 64, 123), sample_noise(&cfg, 64, 123));
    }
}
