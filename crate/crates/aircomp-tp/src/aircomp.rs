//! Over-the-air all-reduce transmission chain.
//!
//! Devices precode their payload symbols, transmit simultaneously, and the
//! server applies an aggregation beamformer to the superposed signal:
//! `s_hat = A^H sum_n H_n B_n s_n + A^H noise`. With zero-forcing precoders
//! the signal term is exactly `sum_n s_n` and the MSE reduces to the
//! amplified noise power `sigma_z^2 tr(A^H A)`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::ChannelSet;
use crate::numerics::{hermitian_eig, inverse_hermitian_pd, ComplexMatrix};
use crate::rng::{complex_gaussian, complex_gaussian_vec, stream_rng};
use crate::{Error, Result};

/// Condition-number limit on `A^H H_n H_n^H A` before a round fails loudly.
const ZF_CONDITION_LIMIT: f64 = 1e12;

/// Receive beamformer plus per-device precoders for one fading block.
#[derive(Debug, Clone)]
pub struct TransceiverDesign {
    /// Aggregation beamformer `A`, `N_r x L`.
    pub aggregation: ComplexMatrix,
    /// Per-device precoders `B_n`, each `N_t x L`.
    pub precoders: Vec<ComplexMatrix>,
}

impl TransceiverDesign {
    /// Payload symbols per round carried by this design.
    pub fn round_len(&self) -> usize {
        self.aggregation.cols()
    }

    /// `tr(A^H A)`; equals the scale `alpha` when `A = sqrt(alpha) G` with
    /// unit-trace `G G^H`.
    pub fn aggregation_power(&self) -> f64 {
        self.aggregation.gram_trace()
    }

    /// Per-device communication energy `(L_0 / L) tr(B_n B_n^H)`.
    pub fn communication_energies(&self, payload_total: u64, payload_per_round: u64) -> Vec<f64> {
        let blowup = payload_total as f64 / payload_per_round as f64;
        self.precoders.iter().map(|b| blowup * b.gram_trace()).collect()
    }
}

/// One round of per-device payload symbols, each of length `L`, out of a
/// complete intermediate output of `total_len` symbols.
#[derive(Debug, Clone)]
pub struct PayloadBlock {
    pub per_device: Vec<Vec<Complex64>>,
    pub total_len: usize,
}

impl PayloadBlock {
    pub fn new(per_device: Vec<Vec<Complex64>>, total_len: usize) -> Result<Self> {
        let round_len = per_device.first().map(|s| s.len()).unwrap_or(0);
        if per_device.is_empty() || round_len == 0 {
            return Err(Error::Dimension {
                operation: "PayloadBlock",
                detail: "at least one device with a non-empty symbol vector".to_string(),
            });
        }
        if per_device.iter().any(|s| s.len() != round_len) {
            return Err(Error::Dimension {
                operation: "PayloadBlock",
                detail: "all per-device symbol vectors must share one length".to_string(),
            });
        }
        if round_len > total_len {
            return Err(Error::Dimension {
                operation: "PayloadBlock",
                detail: format!("round length {round_len} exceeds total payload {total_len}"),
            });
        }
        Ok(Self { per_device, total_len })
    }

    pub fn round_len(&self) -> usize {
        self.per_device[0].len()
    }
}

/// Zero-forcing precoders `B_n = (A^H H_n)^H (A^H H_n H_n^H A)^{-1}`,
/// the MSE-optimal precoders for a fixed aggregation beamformer. Ensures
/// `A^H H_n B_n = I`.
pub fn zero_forcing_precoders(
    aggregation: &ComplexMatrix,
    channels: &ChannelSet,
) -> Result<Vec<ComplexMatrix>> {
    let mut precoders = Vec::with_capacity(channels.num_devices());
    for (n, h) in channels.iter().enumerate() {
        if h.rows() != aggregation.rows() {
            return Err(Error::Dimension {
                operation: "zero_forcing_precoders",
                detail: format!(
                    "device {n}: channel has {} rows but beamformer has {}",
                    h.rows(),
                    aggregation.rows()
                ),
            });
        }
        let effective = aggregation.adjoint().mul(h); // L x N_t
        let gram = effective.mul(&effective.adjoint()); // L x L
        let eigen = hermitian_eig(&gram)?;
        let max = eigen.eigenvalues[0];
        let min = *eigen.eigenvalues.last().unwrap();
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition < ZF_CONDITION_LIMIT) {
            return Err(Error::IllConditionedChannel { device: n, condition });
        }
        let inv = inverse_hermitian_pd(&gram)?;
        precoders.push(effective.adjoint().mul(&inv));
    }
    Ok(precoders)
}

/// Received aggregate after one over-the-air round:
/// `s_hat = A^H (sum_n H_n B_n s_n + noise)`.
pub fn transmit_round(
    payload: &PayloadBlock,
    design: &TransceiverDesign,
    channels: &ChannelSet,
    noise: &[Complex64],
) -> Result<Vec<Complex64>> {
    let n_devices = channels.num_devices();
    let n_rx = channels.server_antennas();
    let round_len = design.round_len();
    if payload.per_device.len() != n_devices || design.precoders.len() != n_devices {
        return Err(Error::Dimension {
            operation: "transmit_round",
            detail: format!(
                "expected {n_devices} devices, payload has {} and design has {}",
                payload.per_device.len(),
                design.precoders.len()
            ),
        });
    }
    if payload.round_len() != round_len {
        return Err(Error::Dimension {
            operation: "transmit_round",
            detail: format!(
                "payload round length {} vs design round length {round_len}",
                payload.round_len()
            ),
        });
    }
    if noise.len() != n_rx {
        return Err(Error::Dimension {
            operation: "transmit_round",
            detail: format!("noise length {} vs {n_rx} receive antennas", noise.len()),
        });
    }

    let mut received = noise.to_vec();
    for n in 0..n_devices {
        let precoded = design.precoders[n].matvec(&payload.per_device[n]); // N_t
        let through = channels.device(n).matvec(&precoded); // N_r
        for (r, t) in received.iter_mut().zip(&through) {
            *r += t;
        }
    }
    Ok(design.aggregation.adjoint().matvec(&received))
}

/// Closed-form transmission MSE of the aggregate estimator:
/// `sum_n tr((A^H H_n B_n - I)(.)^H) + sigma_z^2 tr(A^H A)`.
pub fn mse_closed_form(design: &TransceiverDesign, channels: &ChannelSet, noise_power: f64) -> f64 {
    let round_len = design.round_len();
    let identity = ComplexMatrix::identity(round_len);
    let ah = design.aggregation.adjoint();
    let mut misalignment = 0.0;
    for (h, b) in channels.iter().zip(&design.precoders) {
        let residual = ah.mul(h).mul(b).sub(&identity);
        misalignment += residual.gram_trace();
    }
    misalignment + noise_power * design.aggregation.gram_trace()
}

/// Symbol law for the Monte-Carlo MSE estimate. Both choices are unit
/// variance and uncorrelated across devices and entries, so the empirical
/// MSE converges to [`mse_closed_form`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolDistribution {
    /// Circularly-symmetric complex Gaussian, unit variance.
    Gaussian,
    /// Unit-modulus symbols with uniform random phase.
    UnitModulus,
}

/// Monte-Carlo estimate of `E ||s_hat - sum_n s_n||^2` over random symbols
/// and fresh noise. Trials are split over fixed worker chunks with derived
/// seeds and reduced in chunk order, so the result does not depend on the
/// thread count.
pub fn mse_empirical(
    design: &TransceiverDesign,
    channels: &ChannelSet,
    noise_power: f64,
    num_trials: usize,
    seed: u64,
    distribution: SymbolDistribution,
) -> Result<f64> {
    if num_trials == 0 {
        return Err(Error::InvalidArgument {
            operation: "mse_empirical",
            detail: "num_trials must be >= 1".to_string(),
        });
    }
    let n_devices = channels.num_devices();
    let n_rx = channels.server_antennas();
    let round_len = design.round_len();

    let chunks = 64.min(num_trials);
    let base = num_trials / chunks;
    let extra = num_trials % chunks;
    let totals: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let trials = base + usize::from(c < extra);
            let mut rng = stream_rng(seed, c as u64);
            let zero = Complex64::new(0.0, 0.0);
            let mut acc = 0.0;
            for _ in 0..trials {
                let per_device: Vec<Vec<Complex64>> = (0..n_devices)
                    .map(|_| match distribution {
                        SymbolDistribution::Gaussian => {
                            complex_gaussian_vec(&mut rng, round_len, zero, 1.0)
                        }
                        SymbolDistribution::UnitModulus => (0..round_len)
                            .map(|_| {
                                let z = complex_gaussian(&mut rng, zero, 1.0);
                                if z.norm() == 0.0 {
                                    Complex64::new(1.0, 0.0)
                                } else {
                                    z / z.norm()
                                }
                            })
                            .collect(),
                    })
                    .collect();
                let noise = if noise_power == 0.0 {
                    vec![zero; n_rx]
                } else {
                    complex_gaussian_vec(&mut rng, n_rx, zero, noise_power)
                };
                let target: Vec<Complex64> =
                    (0..round_len).map(|i| per_device.iter().map(|s| s[i]).sum()).collect();
                let payload = PayloadBlock { per_device, total_len: round_len };
                let estimate = transmit_round(&payload, design, channels, &noise)
                    .expect("shape-consistent by construction");
                acc += estimate.iter().zip(&target).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
            }
            acc
        })
        .collect();
    Ok(totals.iter().sum::<f64>() / num_trials as f64)
}

/// Packs real values two-per-complex-symbol (real, imaginary). Odd tails get
/// a zero imaginary part. Exact and lossless together with [`unpack_reals`].
pub fn pack_reals(values: &[f64]) -> Vec<Complex64> {
    values
        .chunks(2)
        .map(|pair| Complex64::new(pair[0], pair.get(1).copied().unwrap_or(0.0)))
        .collect()
}

/// Inverse of [`pack_reals`]; `len` is the original real-valued length.
pub fn unpack_reals(symbols: &[Complex64], len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    for z in symbols {
        out.push(z.re);
        if out.len() == len {
            break;
        }
        out.push(z.im);
        if out.len() == len {
            break;
        }
    }
    assert_eq!(out.len(), len, "not enough symbols to unpack {len} reals");
    out
}

/// Drives a per-round transport over the packed payloads of all partials:
/// `body(per_device_round_symbols, round_sums)` fills the aggregate for one
/// round (zero-padded tail). Returns the reassembled sum matrix.
pub(crate) fn transport_rounds(
    partials: &[crate::numerics::RealMatrix],
    round_len: usize,
    mut body: impl FnMut(&[Vec<Complex64>], &mut [Complex64]),
) -> crate::numerics::RealMatrix {
    let (rows, cols) = (partials[0].rows(), partials[0].cols());
    let reals = rows * cols;
    let packed: Vec<Vec<Complex64>> = partials.iter().map(|p| pack_reals(p.data())).collect();
    let symbols = packed[0].len();
    let rounds = symbols.div_ceil(round_len);
    let mut aggregate = Vec::with_capacity(rounds * round_len);
    let zero = Complex64::new(0.0, 0.0);
    for r in 0..rounds {
        let lo = r * round_len;
        let streams: Vec<Vec<Complex64>> = packed
            .iter()
            .map(|p| (lo..lo + round_len).map(|k| p.get(k).copied().unwrap_or(zero)).collect())
            .collect();
        let mut sums = vec![zero; round_len];
        body(&streams, &mut sums);
        aggregate.extend_from_slice(&sums);
    }
    aggregate.truncate(symbols);
    crate::numerics::RealMatrix::from_vec(rows, cols, unpack_reals(&aggregate, reals))
}

/// Over-the-air [`crate::tensorpar::Reducer`] for one fading block: flattens
/// each partial into rounds of `L` packed symbols and passes them through the
/// transmission chain with fresh noise per round.
#[derive(Debug)]
pub struct AirReducer {
    design: TransceiverDesign,
    channels: ChannelSet,
    noise_power: f64,
    seed: u64,
    rounds_used: u64,
}

impl AirReducer {
    pub fn new(
        design: TransceiverDesign,
        channels: ChannelSet,
        noise_power: f64,
        seed: u64,
    ) -> Self {
        Self { design, channels, noise_power, seed, rounds_used: 0 }
    }
}

impl crate::tensorpar::Reducer for AirReducer {
    fn reduce(
        &mut self,
        partials: &[crate::numerics::RealMatrix],
    ) -> Result<crate::numerics::RealMatrix> {
        if partials.len() != self.channels.num_devices() {
            return Err(Error::Dimension {
                operation: "AirReducer",
                detail: format!(
                    "{} partials vs {} devices",
                    partials.len(),
                    self.channels.num_devices()
                ),
            });
        }
        let round_len = self.design.round_len();
        let n_rx = self.channels.server_antennas();
        let mut failure = None;
        let out = transport_rounds(partials, round_len, |streams, sums| {
            if failure.is_some() {
                return;
            }
            let mut rng = stream_rng(self.seed, self.rounds_used);
            self.rounds_used += 1;
            let noise = if self.noise_power == 0.0 {
                vec![Complex64::new(0.0, 0.0); n_rx]
            } else {
                complex_gaussian_vec(&mut rng, n_rx, Complex64::new(0.0, 0.0), self.noise_power)
            };
            let payload =
                PayloadBlock { per_device: streams.to_vec(), total_len: round_len };
            match transmit_round(&payload, &self.design, &self.channels, &noise) {
                Ok(estimate) => sums.copy_from_slice(&estimate),
                Err(e) => failure = Some(e),
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}
