//! Experiment harness: seeded sweeps over device counts and schemes,
//! metric aggregation, machine-readable reports and the CLI.
//!
//! The entire report is a pure function of (config bytes, seed): channel
//! realizations, solver streams, token sequences and transport noise all
//! derive from per-cell child seeds, and parallel cells reduce in a fixed
//! order.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rayon::prelude::*;

pub use config::ExperimentConfig;
pub use report::{BuildStamp, CellMetrics, ExperimentReport, SweepTrace};

use crate::aircomp::AirReducer;
use crate::baselines::{
    comm_latency, fdma_mse_closed_form, fdma_reduce, token_latency, DigitalReducer, Scheme,
};
use crate::channel::{sample_channels, ChannelSet};
use crate::long_term::{run_long_term, ModelAssignment};
use crate::rng::{derive_seed, stream_rng};
use crate::short_term::{
    residual_power, solve_short_term, EnergyModel, ShortTermOptions, ShortTermOutcome,
};
use crate::tensorpar::{
    forward_sharded, next_token_log_probs, ExactReducer, Reducer, ToyTransformer,
};
use crate::{Error, Result};
use rand::Rng;

/// Perplexity `exp(-(1/L) sum log P(w_k | w_<k))` of realized-token
/// log-probabilities. Rejects positive log-probabilities.
pub fn perplexity(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::Dimension {
            operation: "perplexity",
            detail: "no log-probabilities".to_string(),
        });
    }
    for &lp in log_probs {
        if !lp.is_finite() {
            return Err(Error::InvalidArgument {
                operation: "perplexity",
                detail: format!("non-finite log-probability {lp}"),
            });
        }
        if lp > 0.0 {
            return Err(Error::InvalidProbability { value: lp });
        }
    }
    let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    Ok((-mean).exp())
}

// ---------------------------------------------------------------------------
// Sweep execution
// ---------------------------------------------------------------------------

// Seed stream tags.
const STREAM_CELL: u64 = 0x43454c4c;
const STREAM_LONG_TERM: u64 = 0x4c54;
const STREAM_MODEL: u64 = 0x4d4f44;
const STREAM_TOKENS: u64 = 0x544f4b;
const STREAM_BLOCK: u64 = 0x424c4b;
const STREAM_SOLVE: u64 = 0x534c56;
const STREAM_TRANSPORT: u64 = 0x545250;

/// One coherence block inside a Monte-Carlo round.
struct Block {
    channels: ChannelSet,
    air: Option<Result<(ShortTermOutcome, f64)>>,
    fdma_round_mse: Option<Result<f64>>,
}

/// Reducer wiring one scheme to the per-block realizations; consecutive
/// all-reduce calls advance through blocks every `rounds_per_block` calls.
struct CellReducer<'a> {
    scheme: Scheme,
    blocks: &'a [Block],
    rounds_per_block: u64,
    call: u64,
    noise_power: f64,
    energy: &'a EnergyModel,
    residual: Option<&'a [f64]>,
    seed: u64,
    digital: DigitalReducer,
}

impl<'a> CellReducer<'a> {
    fn block(&self) -> &'a Block {
        let index = (self.call / self.rounds_per_block) as usize;
        &self.blocks[index.min(self.blocks.len() - 1)]
    }
}

impl Reducer for CellReducer<'_> {
    fn reduce(
        &mut self,
        partials: &[crate::numerics::RealMatrix],
    ) -> Result<crate::numerics::RealMatrix> {
        let call_seed = derive_seed(self.seed, self.call);
        let result = match self.scheme {
            Scheme::Exact => ExactReducer.reduce(partials),
            Scheme::Digital => self.digital.reduce(partials),
            Scheme::Air => {
                let block = self.block();
                match block.air.as_ref().expect("air realizations prepared") {
                    Ok((outcome, _)) => {
                        let mut inner = AirReducer::new(
                            outcome.design.clone(),
                            block.channels.clone(),
                            self.noise_power,
                            call_seed,
                        );
                        inner.reduce(partials)
                    }
                    Err(e) => Err(e.clone()),
                }
            }
            Scheme::Fdma => {
                let block = self.block();
                let residual = self.residual.expect("fdma residual prepared");
                fdma_reduce(
                    partials,
                    &block.channels,
                    self.noise_power,
                    self.energy,
                    residual,
                    call_seed,
                )
            }
        };
        self.call += 1;
        result
    }
}

struct CellOutput {
    metrics: Vec<CellMetrics>,
    trace: SweepTrace,
}

fn evaluate_cell(
    config: &ExperimentConfig,
    schemes: &[Scheme],
    n: usize,
    seed: u64,
) -> CellOutput {
    let cell_seed = derive_seed(derive_seed(seed, STREAM_CELL), n as u64);
    let channel_cfg = config.channel_config(n);
    let lat_model = config.latency_model();
    let noise_power = channel_cfg.noise_power;

    let fail_all = |message: String| CellOutput {
        metrics: schemes.iter().map(|&s| CellMetrics::failed(s, n, message.clone())).collect(),
        trace: SweepTrace { n_devices: n, skipped_samples: 0, rows: Vec::new() },
    };

    let energy = match config.energy_model(n) {
        Ok(e) => e,
        Err(e) => return fail_all(e.to_string()),
    };

    // Long-term assignment from channel statistics.
    let long = match run_long_term(
        &channel_cfg,
        &energy,
        &config.step_schedule(),
        &config.long_term_options(),
        derive_seed(cell_seed, STREAM_LONG_TERM),
    ) {
        Ok(r) => r,
        Err(e) => return fail_all(e.to_string()),
    };
    let assignment = long.assignment.clone();
    let trace =
        SweepTrace { n_devices: n, skipped_samples: long.skipped_samples, rows: long.trace };

    // Model weights and the synthetic token sequence are shared across the
    // whole sweep (derived from the run seed, not the cell), so differences
    // between cells come only from the transport and assignment.
    let model =
        match ToyTransformer::new(config.transformer_config(), derive_seed(seed, STREAM_MODEL)) {
            Ok(m) => m,
            Err(e) => return CellOutput { metrics: fail_all(e.to_string()).metrics, trace },
        };
    let tokens: Vec<usize> = {
        let mut rng = stream_rng(seed, STREAM_TOKENS);
        (0..model.config.seq_len).map(|_| rng.gen_range(0..model.config.vocab_size)).collect()
    };

    let needs_air = schemes.contains(&Scheme::Air);
    let needs_fdma = schemes.contains(&Scheme::Fdma);
    let residual = residual_power(assignment.as_slice(), &energy);

    let reduces_per_forward = config.transformer_config().all_reduces_per_forward() as u64;
    let blocks_per_round = reduces_per_forward.div_ceil(config.rounds_per_block).max(1) as usize;
    let st_opts = config.short_term_options();

    // Per-scheme accumulators over Monte-Carlo rounds.
    let mut mse_samples: Vec<Vec<f64>> = vec![Vec::new(); schemes.len()];
    let mut ppl_samples: Vec<Vec<f64>> = vec![Vec::new(); schemes.len()];
    let mut scheme_errors: Vec<Option<String>> = vec![None; schemes.len()];
    let mut warm = None;

    for mc in 0..config.monte_carlo_rounds {
        // Fresh coherence blocks for this round.
        let mut blocks = Vec::with_capacity(blocks_per_round);
        for b in 0..blocks_per_round {
            let block_seed =
                derive_seed(cell_seed, STREAM_BLOCK ^ ((mc as u64) << 16 | b as u64));
            let channels = sample_channels(&channel_cfg, block_seed);
            let air = if needs_air {
                let mut opts = ShortTermOptions { warm_start: warm.take(), ..st_opts.clone() };
                if opts.warm_start.is_some() {
                    opts.sdp.restarts = 1;
                }
                let solved = solve_short_term(
                    &channels,
                    assignment.as_slice(),
                    &energy,
                    &opts,
                    derive_seed(cell_seed, STREAM_SOLVE),
                )
                .map(|outcome| {
                    let mse = noise_power * outcome.solution.scale;
                    (outcome, mse)
                });
                if let Ok((outcome, _)) = &solved {
                    warm = Some(outcome.solution.relaxed.clone());
                }
                Some(solved)
            } else {
                None
            };
            let fdma_round_mse = if needs_fdma {
                Some(match &residual {
                    Ok(c) => fdma_mse_closed_form(&channels, noise_power, &energy, c),
                    Err(e) => Err(e.clone()),
                })
            } else {
                None
            };
            blocks.push(Block { channels, air, fdma_round_mse });
        }

        for (idx, &scheme) in schemes.iter().enumerate() {
            if scheme_errors[idx].is_some() {
                continue;
            }
            // Transmission MSE sample for this round; digital is measured
            // from its own quantization error after the forward pass.
            let mse = match scheme {
                Scheme::Exact | Scheme::Digital => Ok(0.0),
                Scheme::Air => blocks
                    .iter()
                    .map(|b| match b.air.as_ref().unwrap() {
                        Ok((_, mse)) => Ok(*mse),
                        Err(e) => Err(e.clone()),
                    })
                    .sum::<Result<f64>>()
                    .map(|total| total / blocks.len() as f64),
                Scheme::Fdma => blocks
                    .iter()
                    .map(|b| b.fdma_round_mse.as_ref().unwrap().clone())
                    .sum::<Result<f64>>()
                    .map(|total| total / blocks.len() as f64),
            };
            let mse = match mse {
                Ok(v) => v,
                Err(e) => {
                    scheme_errors[idx] = Some(e.to_string());
                    continue;
                }
            };

            let transport_seed =
                derive_seed(cell_seed, STREAM_TRANSPORT ^ ((mc as u64) << 8 | idx as u64));
            let mut reducer = CellReducer {
                scheme,
                blocks: &blocks,
                rounds_per_block: config.rounds_per_block,
                call: 0,
                noise_power,
                energy: &energy,
                residual: residual.as_ref().ok().map(|c| c.as_slice()),
                seed: transport_seed,
                digital: DigitalReducer::new(
                    config.baselines.quant_bits,
                    config.baselines.clip_mult,
                ),
            };
            let logits =
                match forward_sharded(&model, assignment.as_slice(), &tokens, &mut reducer) {
                    Ok(l) => l,
                    Err(e) => {
                        scheme_errors[idx] = Some(e.to_string());
                        continue;
                    }
                };
            let mse = if scheme == Scheme::Digital {
                reducer.digital.mean_round_error(energy.payload_per_round)
            } else {
                mse
            };
            let ppl = match next_token_log_probs(&logits, &tokens).and_then(|lp| perplexity(&lp))
            {
                Ok(p) => p,
                Err(e) => {
                    scheme_errors[idx] = Some(e.to_string());
                    continue;
                }
            };
            mse_samples[idx].push(mse);
            ppl_samples[idx].push(ppl);
        }
    }

    let total_weights = config.total_weights();
    let metrics = schemes
        .iter()
        .enumerate()
        .map(|(idx, &scheme)| {
            if let Some(message) = &scheme_errors[idx] {
                return CellMetrics::failed(scheme, n, message.clone());
            }
            let samples = &mse_samples[idx];
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let var =
                samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / samples.len() as f64;
            let ppl = ppl_samples[idx].iter().sum::<f64>() / ppl_samples[idx].len() as f64;
            CellMetrics {
                scheme: scheme.to_string(),
                n_devices: n,
                mse_mean: mean,
                mse_std: var.sqrt(),
                perplexity: ppl,
                comm_latency_s: comm_latency(scheme, n, &lat_model),
                token_latency_s: token_latency(
                    scheme,
                    n,
                    assignment.as_slice(),
                    &lat_model,
                    total_weights,
                ),
                assignment: assignment.as_slice().to_vec(),
                error: None,
            }
        })
        .collect();

    CellOutput { metrics, trace }
}

/// Runs the full sweep: for each device count, the long-term assignment and
/// `monte_carlo_rounds` of (channel samples, short-term solves, forward pass
/// per scheme, metrics). Cells run in parallel; the report assembles in
/// sweep order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_sweep_stamped(config, BuildStamp::new(""))
}

/// [`run_sweep`] with an externally computed build stamp (the CLI hashes the
/// raw config bytes).
pub fn run_sweep_stamped(config: &ExperimentConfig, build: BuildStamp) -> Result<ExperimentReport> {
    config.validate()?;
    let schemes = config.parsed_schemes()?;
    let seed = config.seed;

    let outputs: Vec<CellOutput> = config
        .sweep
        .par_iter()
        .map(|&n| evaluate_cell(config, &schemes, n, seed))
        .collect();

    let mut cells = Vec::new();
    let mut traces = Vec::new();
    for output in outputs {
        cells.extend(output.metrics);
        traces.push(output.trace);
    }
    Ok(ExperimentReport {
        build,
        seed,
        config: serde_json::to_value(config).map_err(|e| Error::Io(e.to_string()))?,
        cells,
        traces,
    })
}

// ---------------------------------------------------------------------------
// Command-line interface
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "aircomp-tp",
    version,
    about = "Over-the-air all-reduce workbench for tensor-parallel inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full sweep and write report.json, sweep.csv and sca_trace.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Schema and feasibility checks only; no compute.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// One short-term solve at the configured device count (uniform
    /// assignment); prints the scale, MSE and per-device energies.
    SolveShort {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Long-term assignment only; prints the assignment and writes the trace.
    Assign {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for sca_trace.csv (default: current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code_for(error: &Error) -> i32 {
    match error {
        Error::Config(_)
        | Error::Io(_)
        | Error::InvalidArgument { .. }
        | Error::Dimension { .. } => 1,
        _ => 2,
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<(ExperimentConfig, String)> {
    let bytes =
        fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut config = ExperimentConfig::from_json(&bytes)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    Ok((config, bytes))
}

fn configure_threads() {
    if let Ok(value) = std::env::var("AIRCOMP_TP_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            if threads > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
            }
        }
    }
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out, seed } => {
            let (config, bytes) = load_config(&config, seed)?;
            config.validate()?;
            let report = run_sweep_stamped(&config, BuildStamp::new(&bytes))?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("report.json"), report.to_json()?)?;
            fs::write(out.join("sweep.csv"), report.sweep_csv())?;
            fs::write(out.join("sca_trace.csv"), report.trace_csv())?;
            let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
            println!(
                "wrote {} cells ({} failed) to {}",
                report.cells.len(),
                failed,
                out.display()
            );
            Ok(())
        }
        Command::Validate { config } => {
            let (config, _) = load_config(&config, None)?;
            config.validate()?;
            println!(
                "config valid: {} sweep cells, schemes {:?}",
                config.sweep.len(),
                config.schemes
            );
            Ok(())
        }
        Command::SolveShort { config, seed } => {
            let (config, _) = load_config(&config, seed)?;
            config.validate()?;
            let n = config.channel.n_devices;
            let channel_cfg = config.channel_config(n);
            let energy = config.energy_model(n)?;
            let channels = sample_channels(&channel_cfg, config.seed);
            let assignment = ModelAssignment::uniform(n);
            let outcome = solve_short_term(
                &channels,
                assignment.as_slice(),
                &energy,
                &config.short_term_options(),
                config.seed,
            )?;
            println!("alpha = {}", outcome.solution.scale);
            println!("alpha_lower_bound = {}", outcome.solution.scale_lower_bound);
            println!("mse = {}", channel_cfg.noise_power * outcome.solution.scale);
            let comm = outcome
                .design
                .communication_energies(energy.payload_total, energy.payload_per_round);
            let s_tot = energy.weights_per_layer as f64;
            for (dev, comm_energy) in comm.iter().enumerate() {
                let compute = energy.energy_coefficients[dev] * assignment.as_slice()[dev] * s_tot;
                println!(
                    "device {dev}: compute = {}, comm = {}, budget = {}",
                    compute, comm_energy, energy.power_budgets[dev]
                );
            }
            Ok(())
        }
        Command::Assign { config, seed, out } => {
            let (config, _) = load_config(&config, seed)?;
            config.validate()?;
            let n = config.channel.n_devices;
            let result = run_long_term(
                &config.channel_config(n),
                &config.energy_model(n)?,
                &config.step_schedule(),
                &config.long_term_options(),
                config.seed,
            )?;
            for (dev, m) in result.assignment.as_slice().iter().enumerate() {
                println!("m_{dev} = {m}");
            }
            let dir = out.unwrap_or_else(|| PathBuf::from("."));
            fs::create_dir_all(&dir)?;
            let mut csv = String::from("tau");
            for k in 1..=n {
                csv.push_str(&format!(",m_{k}"));
            }
            csv.push_str(",sampled_mse,u0_norm,step_gamma\n");
            for row in &result.trace {
                csv.push_str(&format!("{}", row.iteration));
                for v in &row.assignment {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push_str(&format!(
                    ",{},{},{}\n",
                    row.sampled_mse, row.tracked_gradient_norm, row.gamma
                ));
            }
            fs::write(dir.join("sca_trace.csv"), csv)?;
            println!("trace written to {}", dir.join("sca_trace.csv").display());
            Ok(())
        }
    }
}

/// CLI entry point. Exit codes: 0 success, 1 configuration/usage error,
/// 2 runtime infeasibility.
pub fn cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    configure_threads();
    let parsed = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run_command(parsed.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
