//! Experiment report: per-(scheme, device-count) metrics with CSV and JSON
//! renderings. All formatting uses shortest-round-trip floats, so identical
//! runs produce byte-identical files.

use serde::Serialize;

use crate::baselines::Scheme;
use crate::long_term::TraceRow;

/// Metrics of one (scheme, device count) cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellMetrics {
    pub scheme: String,
    pub n_devices: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub perplexity: f64,
    pub comm_latency_s: f64,
    pub token_latency_s: f64,
    /// Final model assignment used by the cell.
    pub assignment: Vec<f64>,
    /// Failure message when the cell could not be evaluated.
    pub error: Option<String>,
}

impl CellMetrics {
    pub fn failed(scheme: Scheme, n_devices: usize, error: String) -> Self {
        Self {
            scheme: scheme.to_string(),
            n_devices,
            mse_mean: f64::NAN,
            mse_std: f64::NAN,
            perplexity: f64::NAN,
            comm_latency_s: f64::NAN,
            token_latency_s: f64::NAN,
            assignment: Vec::new(),
            error: Some(error),
        }
    }
}

/// Per-device-count long-term trace, stacked into one CSV for the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepTrace {
    pub n_devices: usize,
    pub skipped_samples: u64,
    #[serde(skip)]
    pub rows: Vec<TraceRow>,
}

/// Build identification: crate version plus a content hash of the raw config.
#[derive(Debug, Clone, Serialize)]
pub struct BuildStamp {
    pub version: String,
    pub config_hash: String,
}

impl BuildStamp {
    pub fn new(config_bytes: &str) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: format!("{:016x}", fnv1a(config_bytes.as_bytes())),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Full sweep report.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub build: BuildStamp,
    pub seed: u64,
    pub config: serde_json::Value,
    pub cells: Vec<CellMetrics>,
    #[serde(skip)]
    pub traces: Vec<SweepTrace>,
}

impl ExperimentReport {
    /// `sweep.csv` body, one row per cell.
    pub fn sweep_csv(&self) -> String {
        let mut out = String::from(
            "scheme,n_devices,mse_mean,mse_std,perplexity,comm_latency_s,token_latency_s,seed\n",
        );
        for cell in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                cell.scheme,
                cell.n_devices,
                cell.mse_mean,
                cell.mse_std,
                cell.perplexity,
                cell.comm_latency_s,
                cell.token_latency_s,
                self.seed
            ));
        }
        out
    }

    /// `sca_trace.csv` body: stacked per-N traces, assignment columns padded
    /// to the widest device count.
    pub fn trace_csv(&self) -> String {
        let width = self.traces.iter().map(|t| t.n_devices).max().unwrap_or(0);
        let mut out = String::from("n_devices,tau");
        for k in 1..=width {
            out.push_str(&format!(",m_{k}"));
        }
        out.push_str(",sampled_mse,u0_norm,step_gamma\n");
        for trace in &self.traces {
            for row in &trace.rows {
                out.push_str(&format!("{},{}", trace.n_devices, row.iteration));
                for k in 0..width {
                    match row.assignment.get(k) {
                        Some(v) => out.push_str(&format!(",{v}")),
                        None => out.push(','),
                    }
                }
                out.push_str(&format!(
                    ",{},{},{}\n",
                    row.sampled_mse, row.tracked_gradient_norm, row.gamma
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> crate::Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| crate::Error::Io(e.to_string()))
    }
}
