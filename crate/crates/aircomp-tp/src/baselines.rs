//! Comparison transports and the analytic latency model.
//!
//! Digital all-reduce: each device quantizes its partial to `Q` bits and
//! ships it error-free over an orthogonal sub-channel; the only distortion is
//! quantization. Uncoded analog FDMA: each device sends its raw symbols over
//! its own MIMO link at unit nominal symbol power (capped by the energy
//! budget) with per-device zero-forcing receive equalization on the dominant
//! singular directions; the server sums N independently noised estimates, so
//! the total MSE grows with the device count.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::aircomp::transport_rounds;
use crate::channel::ChannelSet;
use crate::numerics::{hermitian_eig, ComplexMatrix, RealMatrix};
use crate::rng::{complex_gaussian_vec, stream_rng};
use crate::short_term::EnergyModel;
use crate::tensorpar::Reducer;
use crate::{Error, Result};

/// Aggregation transport selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Air,
    Digital,
    Fdma,
    Exact,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Air, Scheme::Digital, Scheme::Fdma, Scheme::Exact];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Air => "air",
            Scheme::Digital => "digital",
            Scheme::Fdma => "fdma",
            Scheme::Exact => "exact",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "air" => Ok(Scheme::Air),
            "digital" => Ok(Scheme::Digital),
            "fdma" => Ok(Scheme::Fdma),
            "exact" => Ok(Scheme::Exact),
            other => Err(Error::Config(format!(
                "unknown scheme '{other}' (expected air, digital, fdma or exact)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Digital all-reduce
// ---------------------------------------------------------------------------

/// Midrise uniform quantizer: clips to `[-clip_range, clip_range]`, indexes
/// `2^bits` cells of width `2 clip_range / 2^bits`, reconstructs at cell
/// centers.
fn quantize(value: f64, bits: u32, clip_range: f64) -> f64 {
    let levels = (1u64 << bits) as f64;
    let delta = 2.0 * clip_range / levels;
    let clipped = value.clamp(-clip_range, clip_range);
    let index = ((clipped + clip_range) / delta).floor().min(levels - 1.0);
    -clip_range + (index + 0.5) * delta
}

/// Quantizes each device's partial to `quant_bits` bits within
/// `[-clip_range, clip_range]`, transports error-free, dequantizes and sums.
/// Deterministic.
pub fn digital_reduce(
    partials: &[RealMatrix],
    quant_bits: u32,
    clip_range: f64,
) -> Result<RealMatrix> {
    if !(clip_range > 0.0) {
        return Err(Error::InvalidArgument {
            operation: "digital_reduce",
            detail: format!("clip range must be > 0, got {clip_range}"),
        });
    }
    let (rows, cols) = (partials[0].rows(), partials[0].cols());
    let mut out = RealMatrix::zeros(rows, cols);
    for p in partials {
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] += quantize(p[(i, j)], quant_bits, clip_range);
            }
        }
    }
    Ok(out)
}

/// Digital OFDMA reducer. The clip range is self-calibrating: `clip_mult`
/// times the pooled standard deviation of the partials in each call.
#[derive(Debug, Clone)]
pub struct DigitalReducer {
    pub quant_bits: u32,
    pub clip_mult: f64,
    /// Measured mean squared quantization error per complex-symbol
    /// equivalent (two reals), accumulated across calls.
    accumulated_error: f64,
    accumulated_symbols: f64,
}

impl DigitalReducer {
    pub fn new(quant_bits: u32, clip_mult: f64) -> Self {
        Self { quant_bits, clip_mult, accumulated_error: 0.0, accumulated_symbols: 0.0 }
    }

    /// Mean squared transport error per round of `round_len` symbols.
    pub fn mean_round_error(&self, round_len: u64) -> f64 {
        if self.accumulated_symbols == 0.0 {
            return 0.0;
        }
        self.accumulated_error / self.accumulated_symbols * round_len as f64
    }
}

impl Reducer for DigitalReducer {
    fn reduce(&mut self, partials: &[RealMatrix]) -> Result<RealMatrix> {
        let (rows, cols) = (partials[0].rows(), partials[0].cols());
        let count = (partials.len() * rows * cols) as f64;
        let mean: f64 =
            partials.iter().map(|p| p.data().iter().sum::<f64>()).sum::<f64>() / count;
        let var: f64 = partials
            .iter()
            .map(|p| p.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
            .sum::<f64>()
            / count;
        let std = var.sqrt();
        let clip = if std > 0.0 { self.clip_mult * std } else { 1.0 };
        let out = digital_reduce(partials, self.quant_bits, clip)?;

        let mut exact = partials[0].clone();
        for p in &partials[1..] {
            exact = exact.add(p);
        }
        let err = out.sub(&exact);
        self.accumulated_error += err.data().iter().map(|v| v * v).sum::<f64>();
        // Two reals per complex symbol.
        self.accumulated_symbols += (rows * cols) as f64 / 2.0;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Uncoded analog FDMA
// ---------------------------------------------------------------------------

/// Per-device single-user link: dominant singular directions of `H_n` with
/// the transmit power meeting the unit-nominal-power/budget cap.
#[derive(Debug, Clone)]
struct FdmaLink {
    /// Right singular vectors (transmit directions), `N_t x L`.
    transmit: ComplexMatrix,
    /// Left singular vectors scaled by `1/sigma_i` (receive equalizer rows),
    /// `L x N_r`.
    equalizer: ComplexMatrix,
    /// Per-symbol transmit power.
    power: f64,
}

const FDMA_RANK_TOL: f64 = 1e-12;

/// Builds the per-device links. Errors if any device's channel cannot carry
/// `round_len` streams.
fn fdma_links(
    channels: &ChannelSet,
    round_len: usize,
    per_symbol_power: &[f64],
) -> Result<Vec<FdmaLink>> {
    let mut links = Vec::with_capacity(channels.num_devices());
    for (n, h) in channels.iter().enumerate() {
        let gram = h.adjoint().mul(h); // N_t x N_t
        let eigen = hermitian_eig(&gram)?;
        if round_len > eigen.eigenvalues.len() {
            return Err(Error::Dimension {
                operation: "fdma_links",
                detail: format!(
                    "device {n}: {round_len} streams exceed {} transmit antennas",
                    eigen.eigenvalues.len()
                ),
            });
        }
        let top = eigen.eigenvalues[0].max(0.0).sqrt();
        let sigmas: Vec<f64> =
            eigen.eigenvalues[..round_len].iter().map(|&l| l.max(0.0).sqrt()).collect();
        if sigmas.iter().any(|&s| s <= FDMA_RANK_TOL * top.max(1e-300)) {
            return Err(Error::IllConditionedChannel {
                device: n,
                condition: if sigmas[round_len - 1] > 0.0 {
                    top / sigmas[round_len - 1]
                } else {
                    f64::INFINITY
                },
            });
        }
        let transmit = ComplexMatrix::from_fn(h.cols(), round_len, |i, k| {
            eigen.eigenvectors[(i, k)]
        });
        // u_i = H v_i / sigma_i; equalizer row i = u_i^H / sigma_i.
        let mut equalizer = ComplexMatrix::zeros(round_len, h.rows());
        for (k, &sigma) in sigmas.iter().enumerate() {
            let u = h.matvec(&transmit.col(k));
            for r in 0..h.rows() {
                equalizer[(k, r)] = u[r].conj() / (sigma * sigma);
            }
        }
        links.push(FdmaLink { transmit, equalizer, power: per_symbol_power[n] });
    }
    Ok(links)
}

fn per_symbol_power(energy: &EnergyModel, residual: &[f64]) -> Vec<f64> {
    // Unit nominal symbol power, capped so the per-layer energy
    // (L_0/L) tr(B B^H) = p L_0 stays within the residual budget.
    residual.iter().map(|&c| (c / energy.payload_total as f64).min(1.0)).collect()
}

/// Closed-form per-round MSE of the FDMA aggregate:
/// `sigma_z^2 sum_n sum_i 1 / (p_n sigma_i^2(H_n))`.
pub fn fdma_mse_closed_form(
    channels: &ChannelSet,
    noise_power: f64,
    energy: &EnergyModel,
    residual: &[f64],
) -> Result<f64> {
    let round_len = energy.payload_per_round as usize;
    let powers = per_symbol_power(energy, residual);
    let links = fdma_links(channels, round_len, &powers)?;
    let mut total = 0.0;
    for link in &links {
        // Row norms of the equalizer are 1/sigma_i^2 each applied to noise.
        for k in 0..round_len {
            let row_norm_sqr: f64 =
                (0..link.equalizer.cols()).map(|r| link.equalizer[(k, r)].norm_sqr()).sum();
            total += noise_power * row_norm_sqr / link.power;
        }
    }
    Ok(total)
}

/// One FDMA transport of the stacked partials: flatten, pack two reals per
/// symbol, send each device's stream over its own equalized link with fresh
/// noise, sum the `N` estimates, unpack. Reproducible given the seed.
pub fn fdma_reduce(
    partials: &[RealMatrix],
    channels: &ChannelSet,
    noise_power: f64,
    energy: &EnergyModel,
    residual: &[f64],
    seed: u64,
) -> Result<RealMatrix> {
    if partials.len() != channels.num_devices() {
        return Err(Error::Dimension {
            operation: "fdma_reduce",
            detail: format!(
                "{} partials vs {} devices",
                partials.len(),
                channels.num_devices()
            ),
        });
    }
    let round_len = energy.payload_per_round as usize;
    let powers = per_symbol_power(energy, residual);
    let links = fdma_links(channels, round_len, &powers)?;
    let mut rng = stream_rng(seed, 0x46444d41);
    Ok(transport_rounds(partials, round_len, |streams, sums| {
        for (n, (link, stream)) in links.iter().zip(streams).enumerate() {
            let scale = link.power.sqrt();
            let sent: Vec<Complex64> = stream.iter().map(|&s| s * scale).collect();
            let through = link.transmit.matvec(&sent);
            let mut received = channels.device(n).matvec(&through);
            let noise = complex_gaussian_vec(
                &mut rng,
                received.len(),
                Complex64::new(0.0, 0.0),
                noise_power,
            );
            for (r, z) in received.iter_mut().zip(&noise) {
                *r += z;
            }
            let estimate = link.equalizer.matvec(&received);
            for (acc, e) in sums.iter_mut().zip(&estimate) {
                *acc += e / scale;
            }
        }
    }))
}

/// FDMA-backed [`Reducer`] for one fading block.
#[derive(Debug)]
pub struct FdmaReducer {
    channels: ChannelSet,
    noise_power: f64,
    energy: EnergyModel,
    residual: Vec<f64>,
    seed: u64,
    calls: u64,
}

impl FdmaReducer {
    pub fn new(
        channels: ChannelSet,
        noise_power: f64,
        energy: EnergyModel,
        residual: Vec<f64>,
        seed: u64,
    ) -> Self {
        Self { channels, noise_power, energy, residual, seed, calls: 0 }
    }
}

impl Reducer for FdmaReducer {
    fn reduce(&mut self, partials: &[RealMatrix]) -> Result<RealMatrix> {
        let seed = crate::rng::derive_seed(self.seed, self.calls);
        self.calls += 1;
        fdma_reduce(partials, &self.channels, self.noise_power, &self.energy, &self.residual, seed)
    }
}

// ---------------------------------------------------------------------------
// Latency model
// ---------------------------------------------------------------------------

/// Analytic communication/compute latency parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    pub bandwidth_hz: f64,
    pub quant_bits: u32,
    pub bits_per_symbol: u32,
    /// Weights per second each device can process.
    pub per_device_compute_rate: f64,
    /// Symbols per all-reduce.
    pub payload_total: u64,
    /// All-reduce operations per generated token.
    pub reduces_per_token: u64,
}

impl LatencyModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0)
            || self.quant_bits == 0
            || self.bits_per_symbol == 0
            || !(self.per_device_compute_rate > 0.0)
            || self.payload_total == 0
            || self.reduces_per_token == 0
        {
            return Err(Error::InvalidArgument {
                operation: "LatencyModel",
                detail: "all latency parameters must be positive".to_string(),
            });
        }
        Ok(())
    }
}

/// Per-token communication latency of one scheme with `n` devices.
///
/// Air: simultaneous superposed transmission, `L_0 R / B` independent of `n`.
/// Digital OFDMA: `L_0 Q` bits per device serialized over a `B/n` share,
/// `L_0 Q n R / (B b)`. Analog FDMA: `L_0 n R / B`. The exact transport has
/// no modeled channel time.
pub fn comm_latency(scheme: Scheme, n: usize, model: &LatencyModel) -> f64 {
    let per_reduce = model.payload_total as f64 / model.bandwidth_hz;
    let reduces = model.reduces_per_token as f64;
    match scheme {
        Scheme::Air => per_reduce * reduces,
        Scheme::Digital => {
            per_reduce * reduces * n as f64 * model.quant_bits as f64
                / model.bits_per_symbol as f64
        }
        Scheme::Fdma => per_reduce * reduces * n as f64,
        Scheme::Exact => 0.0,
    }
}

/// Per-token latency: slowest device's compute share plus communication.
pub fn token_latency(
    scheme: Scheme,
    n: usize,
    assignment: &[f64],
    model: &LatencyModel,
    total_weights: u64,
) -> f64 {
    let max_share = assignment.iter().cloned().fold(0.0, f64::max);
    let compute = max_share * total_weights as f64 / model.per_device_compute_rate;
    compute + comm_latency(scheme, n, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channels, ChannelConfig};
    use rand::Rng;

    fn channel_config(n: usize, rx: usize, tx: usize) -> ChannelConfig {
        ChannelConfig {
            num_devices: n,
            server_antennas: rx,
            device_antennas: tx,
            rician_mean: Complex64::new(1.0, 0.0),
            entry_variance: 1.0,
            noise_power: 1.0,
        }
    }

    fn energy(n: usize, budget: f64, l0: u64, l: u64) -> EnergyModel {
        EnergyModel {
            energy_coefficients: vec![0.0; n],
            weights_per_layer: 1,
            power_budgets: vec![budget; n],
            payload_total: l0,
            payload_per_round: l,
        }
    }

    fn random_partials(n: usize, rows: usize, cols: usize, seed: u64) -> Vec<RealMatrix> {
        let mut rng = stream_rng(seed, 0);
        (0..n)
            .map(|_| RealMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 2.0 - 1.0))
            .collect()
    }

    fn exact_sum(partials: &[RealMatrix]) -> RealMatrix {
        let mut out = partials[0].clone();
        for p in &partials[1..] {
            out = out.add(p);
        }
        out
    }

    #[test]
    fn fine_quantization_approaches_exact_sum() {
        let partials = random_partials(3, 4, 5, 1);
        let exact = exact_sum(&partials);
        let out = digital_reduce(&partials, 24, 1.5).unwrap();
        let err = out.sub(&exact).frob_norm() / exact.frob_norm();
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn quantization_error_bounded_per_entry() {
        // For in-range inputs each device's error is at most delta/2, so the
        // per-entry sum error is bounded by N * delta / 2.
        let n = 4;
        let clip = 2.0;
        let bits = 8u32;
        let partials = random_partials(n, 6, 6, 2); // entries within [-1, 1]
        let exact = exact_sum(&partials);
        let out = digital_reduce(&partials, bits, clip).unwrap();
        let delta = 2.0 * clip / (1u64 << bits) as f64;
        let bound = n as f64 * delta / 2.0;
        for i in 0..6 {
            for j in 0..6 {
                let err = (out[(i, j)] - exact[(i, j)]).abs();
                assert!(err <= bound + 1e-12, "entry error {err} exceeds {bound}");
            }
        }
    }

    #[test]
    fn digital_reduce_deterministic() {
        let partials = random_partials(2, 3, 3, 3);
        let a = digital_reduce(&partials, 8, 1.0).unwrap();
        let b = digital_reduce(&partials, 8, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn digital_reducer_tracks_quantization_error() {
        let partials = random_partials(2, 8, 8, 4);
        let mut reducer = DigitalReducer::new(8, 4.0);
        let out = reducer.reduce(&partials).unwrap();
        let exact = exact_sum(&partials);
        let expected = out.sub(&exact).data().iter().map(|v| v * v).sum::<f64>()
            / ((8.0 * 8.0) / 2.0);
        assert!((reducer.mean_round_error(1) - expected).abs() < 1e-12);
    }

    #[test]
    fn fdma_noiseless_recovers_exact_sum() {
        let channels = sample_channels(&channel_config(3, 6, 2), 5);
        let e = energy(3, 1.0, 8, 2);
        let residual = vec![1.0; 3];
        let partials = random_partials(3, 4, 4, 6);
        let exact = exact_sum(&partials);
        let out = fdma_reduce(&partials, &channels, 0.0, &e, &residual, 7).unwrap();
        let err = out.sub(&exact).frob_norm();
        assert!(err < 1e-8, "noiseless fdma error {err}");
    }

    #[test]
    fn fdma_reproducible_given_seed() {
        let channels = sample_channels(&channel_config(2, 4, 2), 8);
        let e = energy(2, 1.0, 8, 2);
        let residual = vec![1.0; 2];
        let partials = random_partials(2, 4, 4, 9);
        let a = fdma_reduce(&partials, &channels, 1.0, &e, &residual, 3).unwrap();
        let b = fdma_reduce(&partials, &channels, 1.0, &e, &residual, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fdma_single_link_matches_closed_form() {
        // N = 1: empirical MSE over many rounds matches the analytic
        // equalized noise power.
        let channels = sample_channels(&channel_config(1, 6, 2), 10);
        let e = energy(1, 1.0, 2, 2);
        let residual = vec![1.0];
        let closed = fdma_mse_closed_form(&channels, 1.0, &e, &residual).unwrap();
        let trials = 4000;
        let mut total = 0.0;
        for t in 0..trials {
            // One round of 2 symbols = a 1x4 real matrix payload.
            let partials = random_partials(1, 1, 4, 100 + t);
            let exact = exact_sum(&partials);
            let out = fdma_reduce(&partials, &channels, 1.0, &e, &residual, t).unwrap();
            total += out.sub(&exact).data().iter().map(|v| v * v).sum::<f64>();
        }
        let empirical = total / trials as f64;
        let rel = (empirical - closed).abs() / closed;
        assert!(rel < 0.1, "empirical {empirical} vs closed {closed}");
    }

    #[test]
    fn fdma_mse_grows_linearly_with_devices() {
        // Least-squares slope of the closed-form MSE against N over fixed
        // statistics is positive with R^2 > 0.9.
        let counts = [2usize, 4, 6, 8];
        let seeds = 20u64;
        let mut means = Vec::new();
        for &n in &counts {
            let mut acc = 0.0;
            for seed in 0..seeds {
                let channels = sample_channels(&channel_config(n, 6, 2), 40 + seed);
                let e = energy(n, 1.0, 8, 2);
                let residual = vec![1.0; n];
                acc += fdma_mse_closed_form(&channels, 1.0, &e, &residual).unwrap();
            }
            means.push(acc / seeds as f64);
        }
        let n = counts.len() as f64;
        let mean_x = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
        let mean_y = means.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (&c, &y) in counts.iter().zip(&means) {
            let dx = c as f64 - mean_x;
            let dy = y - mean_y;
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
        let slope = sxy / sxx;
        let r2 = sxy * sxy / (sxx * syy);
        assert!(slope > 0.0, "slope {slope}");
        assert!(r2 > 0.9, "R^2 {r2}");
    }

    fn default_latency() -> LatencyModel {
        LatencyModel {
            bandwidth_hz: 1e7,
            quant_bits: 8,
            bits_per_symbol: 8,
            per_device_compute_rate: 2e7,
            payload_total: 1024,
            reduces_per_token: 4,
        }
    }

    #[test]
    fn latency_single_device_air_equals_fdma() {
        let model = default_latency();
        let air = comm_latency(Scheme::Air, 1, &model);
        let fdma = comm_latency(Scheme::Fdma, 1, &model);
        assert_eq!(air, fdma);
    }

    #[test]
    fn air_latency_independent_of_devices() {
        let model = default_latency();
        let l1 = comm_latency(Scheme::Air, 1, &model);
        let l8 = comm_latency(Scheme::Air, 8, &model);
        assert_eq!(l1, l8);
    }

    #[test]
    fn digital_to_air_ratio_follows_formula() {
        // At N = 8, Q = 8, b = 8: ratio = Q N / b = 8.
        let model = default_latency();
        let ratio = comm_latency(Scheme::Digital, 8, &model) / comm_latency(Scheme::Air, 8, &model);
        assert!((ratio - 8.0).abs() < 1e-12);
    }

    #[test]
    fn latency_ordering_across_schemes() {
        let model = default_latency();
        for n in [1, 2, 4, 8] {
            let air = comm_latency(Scheme::Air, n, &model);
            let fdma = comm_latency(Scheme::Fdma, n, &model);
            let digital = comm_latency(Scheme::Digital, n, &model);
            assert!(air > 0.0 && fdma > 0.0 && digital > 0.0);
            assert!(air <= fdma && fdma <= digital);
        }
    }

    #[test]
    fn token_latency_limits() {
        let model = default_latency();
        let total_weights = 98_304;

        // Single device: full compute plus single-device communication.
        let single = token_latency(Scheme::Air, 1, &[1.0], &model, total_weights);
        let expect = total_weights as f64 / model.per_device_compute_rate
            + comm_latency(Scheme::Air, 1, &model);
        assert!((single - expect).abs() < 1e-15);

        // Uniform assignment with negligible communication: ~1/N scaling.
        let mut cheap_comm = model.clone();
        cheap_comm.bandwidth_hz = 1e15;
        let t1 = token_latency(Scheme::Air, 1, &[1.0], &cheap_comm, total_weights);
        let t4 = token_latency(Scheme::Air, 4, &[0.25; 4], &cheap_comm, total_weights);
        assert!((t1 / t4 - 4.0).abs() < 1e-6);
    }

    #[test]
    fn token_latency_reproduces_generation_time_pattern() {
        // Air strictly decreases across N = 1, 2, 4, 8; digital dips then
        // rises again at N = 8.
        let model = default_latency();
        let total_weights = 98_304;
        let counts = [1usize, 2, 4, 8];
        let air: Vec<f64> = counts
            .iter()
            .map(|&n| {
                token_latency(Scheme::Air, n, &vec![1.0 / n as f64; n], &model, total_weights)
            })
            .collect();
        let digital: Vec<f64> = counts
            .iter()
            .map(|&n| {
                token_latency(Scheme::Digital, n, &vec![1.0 / n as f64; n], &model, total_weights)
            })
            .collect();
        for pair in air.windows(2) {
            assert!(pair[1] < pair[0], "air latencies {air:?}");
        }
        assert!(digital[1] < digital[0] && digital[2] < digital[1], "digital {digital:?}");
        assert!(digital[3] > digital[2], "digital {digital:?}");
        assert!(air[3] * 2.0 <= digital[3], "air {air:?} vs digital {digital:?}");
    }
}
