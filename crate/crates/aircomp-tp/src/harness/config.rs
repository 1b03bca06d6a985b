//! Experiment configuration: JSON schema and conversion into domain types.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::baselines::{LatencyModel, Scheme};
use crate::channel::ChannelConfig;
use crate::long_term::{LongTermOptions, StepSchedule};
use crate::short_term::{EnergyModel, SdpOptions, ShortTermOptions};
use crate::tensorpar::TransformerConfig;
use crate::{Error, Result};

/// A scalar broadcast to every device, or an explicit per-device list.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PerDevice {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerDevice {
    pub fn resolve(&self, n: usize, field: &str) -> Result<Vec<f64>> {
        match self {
            PerDevice::Scalar(v) => Ok(vec![*v; n]),
            PerDevice::List(values) if values.len() == n => Ok(values.clone()),
            PerDevice::List(values) => Err(Error::Config(format!(
                "{field}: expected {n} entries, got {}",
                values.len()
            ))),
        }
    }
}

/// A real scalar or an explicit `[re, im]` pair.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ComplexScalar {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexScalar {
    pub fn to_complex(&self) -> Complex64 {
        match self {
            ComplexScalar::Real(re) => Complex64::new(*re, 0.0),
            ComplexScalar::Pair([re, im]) => Complex64::new(*re, *im),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChannelBlock {
    #[serde(default = "default_n_devices")]
    pub n_devices: usize,
    #[serde(default = "default_n_rx")]
    pub n_rx: usize,
    #[serde(default = "default_n_tx")]
    pub n_tx: usize,
    #[serde(default = "default_rician_mean")]
    pub rician_mean: ComplexScalar,
    #[serde(default = "default_one")]
    pub variance: f64,
    #[serde(default = "default_one")]
    pub noise_power: f64,
}

fn default_n_devices() -> usize {
    8
}
fn default_n_rx() -> usize {
    20
}
fn default_n_tx() -> usize {
    4
}
fn default_rician_mean() -> ComplexScalar {
    ComplexScalar::Real(1.0)
}
fn default_one() -> f64 {
    1.0
}

impl Default for ChannelBlock {
    fn default() -> Self {
        Self {
            n_devices: default_n_devices(),
            n_rx: default_n_rx(),
            n_tx: default_n_tx(),
            rician_mean: default_rician_mean(),
            variance: 1.0,
            noise_power: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnergyBlock {
    #[serde(default = "default_energy_coefficient")]
    pub energy_coefficient: PerDevice,
    #[serde(default = "default_power_budget")]
    pub power_budget: PerDevice,
    #[serde(default = "default_payload_per_round")]
    pub payload_per_round: u64,
    /// Total symbols per all-reduce; derived from the model when absent.
    #[serde(default)]
    pub payload_total: Option<u64>,
    /// Weights per layer; derived from the model when absent.
    #[serde(default)]
    pub weights_per_layer: Option<u64>,
}

fn default_energy_coefficient() -> PerDevice {
    PerDevice::Scalar(0.5)
}
fn default_power_budget() -> PerDevice {
    PerDevice::Scalar(60_000.0)
}
fn default_payload_per_round() -> u64 {
    4
}

impl Default for EnergyBlock {
    fn default() -> Self {
        Self {
            energy_coefficient: default_energy_coefficient(),
            power_budget: default_power_budget(),
            payload_per_round: default_payload_per_round(),
            payload_total: None,
            weights_per_layer: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
}

fn default_d_model() -> usize {
    64
}
fn default_d_ff() -> usize {
    256
}
fn default_heads() -> usize {
    4
}
fn default_layers() -> usize {
    2
}
fn default_vocab() -> usize {
    256
}
fn default_seq_len() -> usize {
    32
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            d_model: default_d_model(),
            d_ff: default_d_ff(),
            num_heads: default_heads(),
            num_layers: default_layers(),
            vocab_size: default_vocab(),
            seq_len: default_seq_len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ShortTermBlock {
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_sdp_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_rand_trials")]
    pub rand_trials: usize,
}

fn default_restarts() -> usize {
    5
}
fn default_sdp_iters() -> usize {
    2000
}
fn default_grad_tol() -> f64 {
    1e-6
}
fn default_rand_trials() -> usize {
    100
}

impl Default for ShortTermBlock {
    fn default() -> Self {
        Self {
            restarts: default_restarts(),
            max_iters: default_sdp_iters(),
            grad_tol: default_grad_tol(),
            rand_trials: default_rand_trials(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LongTermBlock {
    #[serde(default = "default_rho_exponent")]
    pub rho_exponent: f64,
    #[serde(default = "default_gamma_exponent")]
    pub gamma_exponent: f64,
    #[serde(default = "default_one")]
    pub eta0: f64,
    #[serde(default = "default_one")]
    pub eta1: f64,
    #[serde(default = "default_lt_iters")]
    pub max_iters: u64,
    #[serde(default = "default_convergence_tol")]
    pub convergence_tol: f64,
    #[serde(default = "default_convergence_window")]
    pub convergence_window: u64,
    #[serde(default = "default_inner_restarts")]
    pub inner_restarts: usize,
    #[serde(default = "default_inner_iters")]
    pub inner_max_iters: usize,
    #[serde(default = "default_inner_trials")]
    pub inner_rand_trials: usize,
}

fn default_rho_exponent() -> f64 {
    0.6
}
fn default_gamma_exponent() -> f64 {
    0.8
}
fn default_lt_iters() -> u64 {
    120
}
fn default_convergence_tol() -> f64 {
    1e-5
}
fn default_convergence_window() -> u64 {
    20
}
fn default_inner_restarts() -> usize {
    1
}
fn default_inner_iters() -> usize {
    300
}
fn default_inner_trials() -> usize {
    20
}

impl Default for LongTermBlock {
    fn default() -> Self {
        Self {
            rho_exponent: default_rho_exponent(),
            gamma_exponent: default_gamma_exponent(),
            eta0: 1.0,
            eta1: 1.0,
            max_iters: default_lt_iters(),
            convergence_tol: default_convergence_tol(),
            convergence_window: default_convergence_window(),
            inner_restarts: default_inner_restarts(),
            inner_max_iters: default_inner_iters(),
            inner_rand_trials: default_inner_trials(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BaselinesBlock {
    #[serde(default = "default_quant_bits")]
    pub quant_bits: u32,
    #[serde(default = "default_clip_mult")]
    pub clip_mult: f64,
    #[serde(default = "default_bits_per_symbol")]
    pub bits_per_symbol: u32,
    #[serde(default = "default_compute_rate")]
    pub compute_rate: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    /// All-reduces per token; derived from the model when absent.
    #[serde(default)]
    pub reduces_per_token: Option<u64>,
}

fn default_quant_bits() -> u32 {
    8
}
fn default_clip_mult() -> f64 {
    4.0
}
fn default_bits_per_symbol() -> u32 {
    8
}
fn default_compute_rate() -> f64 {
    2e7
}
fn default_bandwidth() -> f64 {
    1e7
}

impl Default for BaselinesBlock {
    fn default() -> Self {
        Self {
            quant_bits: default_quant_bits(),
            clip_mult: default_clip_mult(),
            bits_per_symbol: default_bits_per_symbol(),
            compute_rate: default_compute_rate(),
            bandwidth_hz: default_bandwidth(),
            reduces_per_token: None,
        }
    }
}

/// Full experiment configuration as read from JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub channel: ChannelBlock,
    pub energy: EnergyBlock,
    pub model: ModelBlock,
    pub short_term: ShortTermBlock,
    pub long_term: LongTermBlock,
    pub baselines: BaselinesBlock,
    pub sweep: Vec<usize>,
    pub schemes: Vec<String>,
    pub monte_carlo_rounds: usize,
    pub rounds_per_block: u64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            channel: ChannelBlock::default(),
            energy: EnergyBlock::default(),
            model: ModelBlock::default(),
            short_term: ShortTermBlock::default(),
            long_term: LongTermBlock::default(),
            baselines: BaselinesBlock::default(),
            sweep: vec![1, 2, 4, 8],
            schemes: vec![
                "air".to_string(),
                "digital".to_string(),
                "fdma".to_string(),
                "exact".to_string(),
            ],
            monte_carlo_rounds: 3,
            rounds_per_block: 1,
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(bytes: &str) -> Result<Self> {
        serde_json::from_str(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn parsed_schemes(&self) -> Result<Vec<Scheme>> {
        if self.schemes.is_empty() {
            return Err(Error::Config("schemes must be non-empty".to_string()));
        }
        self.schemes.iter().map(|s| s.parse()).collect()
    }

    pub fn transformer_config(&self) -> TransformerConfig {
        TransformerConfig {
            d_model: self.model.d_model,
            d_ff: self.model.d_ff,
            num_heads: self.model.num_heads,
            num_layers: self.model.num_layers,
            vocab_size: self.model.vocab_size,
            seq_len: self.model.seq_len,
        }
    }

    pub fn channel_config(&self, n_devices: usize) -> ChannelConfig {
        ChannelConfig {
            num_devices: n_devices,
            server_antennas: self.channel.n_rx,
            device_antennas: self.channel.n_tx,
            rician_mean: self.channel.rician_mean.to_complex(),
            entry_variance: self.channel.variance,
            noise_power: self.channel.noise_power,
        }
    }

    pub fn weights_per_layer(&self) -> u64 {
        self.energy
            .weights_per_layer
            .unwrap_or_else(|| self.transformer_config().weights_per_layer())
    }

    pub fn payload_total(&self) -> u64 {
        self.energy
            .payload_total
            .unwrap_or_else(|| self.transformer_config().all_reduce_payload_symbols())
    }

    pub fn energy_model(&self, n_devices: usize) -> Result<EnergyModel> {
        let model = EnergyModel {
            energy_coefficients: self
                .energy
                .energy_coefficient
                .resolve(n_devices, "energy.energy_coefficient")?,
            weights_per_layer: self.weights_per_layer(),
            power_budgets: self.energy.power_budget.resolve(n_devices, "energy.power_budget")?,
            payload_total: self.payload_total(),
            payload_per_round: self.energy.payload_per_round,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn short_term_options(&self) -> ShortTermOptions {
        ShortTermOptions {
            sdp: SdpOptions {
                restarts: self.short_term.restarts,
                max_iters: self.short_term.max_iters,
                grad_tol: self.short_term.grad_tol,
            },
            rand_trials: self.short_term.rand_trials,
            warm_start: None,
        }
    }

    pub fn step_schedule(&self) -> StepSchedule {
        StepSchedule {
            rho_exponent: self.long_term.rho_exponent,
            gamma_exponent: self.long_term.gamma_exponent,
        }
    }

    pub fn long_term_options(&self) -> LongTermOptions {
        LongTermOptions {
            max_iters: self.long_term.max_iters,
            convergence_tol: self.long_term.convergence_tol,
            convergence_window: self.long_term.convergence_window,
            curvature_objective: self.long_term.eta0,
            curvature_constraint: self.long_term.eta1,
            inner: ShortTermOptions {
                sdp: SdpOptions {
                    restarts: self.long_term.inner_restarts,
                    max_iters: self.long_term.inner_max_iters,
                    grad_tol: self.short_term.grad_tol,
                },
                rand_trials: self.long_term.inner_rand_trials,
                warm_start: None,
            },
            max_consecutive_skips: 25,
        }
    }

    pub fn latency_model(&self) -> LatencyModel {
        LatencyModel {
            bandwidth_hz: self.baselines.bandwidth_hz,
            quant_bits: self.baselines.quant_bits,
            bits_per_symbol: self.baselines.bits_per_symbol,
            per_device_compute_rate: self.baselines.compute_rate,
            payload_total: self.payload_total(),
            reduces_per_token: self
                .baselines
                .reduces_per_token
                .unwrap_or_else(|| self.transformer_config().all_reduces_per_forward() as u64),
        }
    }

    /// Total shardable weights across all layers.
    pub fn total_weights(&self) -> u64 {
        self.weights_per_layer() * self.model.num_layers as u64
    }

    /// Schema and feasibility validation, without any compute.
    pub fn validate(&self) -> Result<()> {
        self.transformer_config().validate()?;
        self.channel_config(self.channel.n_devices).validate()?;
        self.step_schedule().validate()?;
        self.latency_model().validate()?;
        if self.sweep.is_empty() {
            return Err(Error::Config("sweep must list at least one device count".to_string()));
        }
        if self.sweep.contains(&0) {
            return Err(Error::Config("sweep entries must be >= 1".to_string()));
        }
        if self.monte_carlo_rounds == 0 {
            return Err(Error::Config("monte_carlo_rounds must be >= 1".to_string()));
        }
        if self.rounds_per_block == 0 {
            return Err(Error::Config("rounds_per_block must be >= 1".to_string()));
        }
        self.parsed_schemes()?;
        if self.energy.payload_per_round as usize > self.channel.n_tx {
            return Err(Error::Config(format!(
                "payload_per_round {} exceeds n_tx {}: zero-forcing needs L <= N_t",
                self.energy.payload_per_round, self.channel.n_tx
            )));
        }
        if self.energy.payload_per_round as usize > self.channel.n_rx {
            return Err(Error::Config(format!(
                "payload_per_round {} exceeds n_rx {}",
                self.energy.payload_per_round, self.channel.n_rx
            )));
        }
        let mut counts = self.sweep.clone();
        counts.push(self.channel.n_devices);
        for n in counts {
            let energy = self.energy_model(n)?;
            if self.model.d_ff < n {
                return Err(Error::Config(format!(
                    "d_ff {} must be >= device count {n}",
                    self.model.d_ff
                )));
            }
            // Feasibility of the uniform assignment: every device must keep
            // positive residual power.
            let uniform = vec![1.0 / n as f64; n];
            crate::short_term::residual_power(&uniform, &energy)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let config = ExperimentConfig::default();
        config.validate().unwrap();
        assert_eq!(config.payload_total(), 1024);
        assert_eq!(config.weights_per_layer(), 49_152);
        assert_eq!(config.total_weights(), 98_304);
        assert_eq!(config.latency_model().reduces_per_token, 4);
    }

    #[test]
    fn json_round_trip_and_overrides() {
        let json = r#"{
            "channel": {"n_devices": 2, "n_rx": 6, "n_tx": 2, "rician_mean": [1.0, 0.5]},
            "energy": {"power_budget": [10.0, 20.0], "payload_per_round": 2,
                       "energy_coefficient": 0.01, "weights_per_layer": 100},
            "sweep": [2],
            "schemes": ["air", "exact"],
            "seed": 9
        }"#;
        let config = ExperimentConfig::from_json(json).unwrap();
        config.validate().unwrap();
        assert_eq!(config.channel_config(2).rician_mean, Complex64::new(1.0, 0.5));
        assert_eq!(config.energy_model(2).unwrap().power_budgets, vec![10.0, 20.0]);
        assert_eq!(config.parsed_schemes().unwrap(), vec![Scheme::Air, Scheme::Exact]);
    }

    #[test]
    fn mismatched_per_device_list_rejected() {
        let json = r#"{
            "energy": {"power_budget": [10.0, 20.0]},
            "sweep": [3]
        }"#;
        let config = ExperimentConfig::from_json(json).unwrap();
        assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn infeasible_uniform_assignment_rejected() {
        // e * s_tot = 2 per unit fraction against a unit budget: at n = 1
        // the uniform assignment needs 2 > 1.
        let json = r#"{
            "energy": {"energy_coefficient": 2.0, "power_budget": 1.0,
                       "weights_per_layer": 1, "payload_total": 8},
            "sweep": [1]
        }"#;
        let config = ExperimentConfig::from_json(json).unwrap();
        assert!(matches!(config.validate(), Err(Error::InfeasibleAssignment { .. })));
    }

    #[test]
    fn unknown_fields_rejected() {
        let json = r#"{"chanel": {}}"#;
        assert!(ExperimentConfig::from_json(json).is_err());
    }

    #[test]
    fn unknown_scheme_rejected() {
        let json = r#"{"schemes": ["air", "carrier-pigeon"]}"#;
        let config = ExperimentConfig::from_json(json).unwrap();
        assert!(config.validate().is_err());
    }
}
