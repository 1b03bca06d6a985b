//! Short-term transceiver optimization for one fading block.
//!
//! For a fixed model assignment the transceiver problem reduces to finding a
//! normalized aggregation beamformer `G` (trace-one Gram) and the smallest
//! scale `alpha` meeting every device's residual-power constraint
//! `(L_0 / (alpha L)) tr((G^H H_n H_n^H G)^{-1}) <= c_n`. The chain solved
//! here:
//!
//! 1. relax to a concave max-min-eigenvalue program over the spectrahedron
//!    `max_{tr(Ghat)=1, Ghat >= 0} min_n c_n lambda_min(H_n^H Ghat H_n)`,
//!    solved by projected supergradient ascent,
//! 2. map `Ghat` back to a rank-`L` factor by Gaussian randomization,
//! 3. scale by `alpha` and derive zero-forcing precoders.

use num_complex::Complex64;

use crate::aircomp::{zero_forcing_precoders, TransceiverDesign};
use crate::channel::ChannelSet;
use crate::numerics::{hermitian_eig, psd_trace1_projection, ComplexMatrix};
use crate::rng::{complex_gaussian_vec, stream_rng};
use crate::{Error, Result};

/// Energy bookkeeping for one transformer layer's all-reduce.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    /// Energy per weight accessed during forward computation, per device.
    pub energy_coefficients: Vec<f64>,
    /// Weights per layer shared across the device group.
    pub weights_per_layer: u64,
    /// Maximum per-layer energy budget per device.
    pub power_budgets: Vec<f64>,
    /// Total payload symbols per all-reduce (`L_0`).
    pub payload_total: u64,
    /// Payload symbols per transmission round (`L`).
    pub payload_per_round: u64,
}

impl EnergyModel {
    pub fn num_devices(&self) -> usize {
        self.power_budgets.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.energy_coefficients.len() != self.power_budgets.len() {
            return Err(Error::InvalidArgument {
                operation: "EnergyModel",
                detail: "energy coefficient and power budget lengths differ".to_string(),
            });
        }
        if self.energy_coefficients.iter().any(|&e| !(e >= 0.0)) {
            return Err(Error::InvalidArgument {
                operation: "EnergyModel",
                detail: "energy coefficients must be >= 0".to_string(),
            });
        }
        if self.power_budgets.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidArgument {
                operation: "EnergyModel",
                detail: "power budgets must be > 0".to_string(),
            });
        }
        if self.payload_per_round == 0 || self.payload_per_round > self.payload_total {
            return Err(Error::InvalidArgument {
                operation: "EnergyModel",
                detail: format!(
                    "payload per round {} must be in 1..={}",
                    self.payload_per_round, self.payload_total
                ),
            });
        }
        Ok(())
    }

    /// `L_0 / L`: rounds per all-reduce.
    pub fn rounds_per_all_reduce(&self) -> f64 {
        self.payload_total as f64 / self.payload_per_round as f64
    }
}

/// Solver controls for the relaxed spectrahedron program.
#[derive(Debug, Clone)]
pub struct SdpOptions {
    pub restarts: usize,
    pub max_iters: usize,
    /// Projected supergradient-mapping norm below which the solve certifies.
    pub grad_tol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { restarts: 5, max_iters: 2000, grad_tol: 1e-6 }
    }
}

/// Controls for the full short-term chain.
#[derive(Debug, Clone)]
pub struct ShortTermOptions {
    pub sdp: SdpOptions,
    pub rand_trials: usize,
    /// Previous `Ghat` to seed the first restart, e.g. across SCA iterations.
    pub warm_start: Option<ComplexMatrix>,
}

impl Default for ShortTermOptions {
    fn default() -> Self {
        Self { sdp: SdpOptions::default(), rand_trials: 100, warm_start: None }
    }
}

/// Output of the relaxation-randomization-scaling chain.
#[derive(Debug, Clone)]
pub struct ShortTermSolution {
    /// Normalized aggregation beamformer `G` with `tr(G G^H) = 1`.
    pub normalized_beamformer: ComplexMatrix,
    /// Scale `alpha` so that `A = sqrt(alpha) G`.
    pub scale: f64,
    /// Relaxed spectrahedron solution `Ghat`.
    pub relaxed: ComplexMatrix,
    /// Scale of the relaxed program, `L_0 / t(Ghat*)`. Lower-bounds `scale`
    /// in the operating regime where `rank(Ghat*) > L`; for low-rank optima
    /// the eigenvalue bound is conservative and `scale` may undercut it.
    pub scale_lower_bound: f64,
}

/// Short-term solve bundle consumed by the long-term stage and the harness.
#[derive(Debug, Clone)]
pub struct ShortTermOutcome {
    pub solution: ShortTermSolution,
    pub design: TransceiverDesign,
    /// Residual power `c_n` after compute energy.
    pub residual_power: Vec<f64>,
    /// Per-device minimal scale `t_n / c_n`; `alpha` is their maximum.
    pub alpha_requirements: Vec<f64>,
}

impl ShortTermOutcome {
    /// `t_n = L_0 tr((G^H H_n H_n^H G)^{-1}) / L`, the numerator of device
    /// n's scale requirement.
    pub fn communication_terms(&self) -> Vec<f64> {
        self.alpha_requirements.iter().zip(&self.residual_power).map(|(req, c)| req * c).collect()
    }
}

/// Residual power `c_n = P_n^max - e_n m_n s_tot` available for transmission.
pub fn residual_power(assignment: &[f64], energy: &EnergyModel) -> Result<Vec<f64>> {
    if assignment.len() != energy.num_devices() {
        return Err(Error::Dimension {
            operation: "residual_power",
            detail: format!(
                "assignment has {} entries for {} devices",
                assignment.len(),
                energy.num_devices()
            ),
        });
    }
    let s_tot = energy.weights_per_layer as f64;
    let mut residual = Vec::with_capacity(assignment.len());
    for (n, &m) in assignment.iter().enumerate() {
        let c = energy.power_budgets[n] - energy.energy_coefficients[n] * m * s_tot;
        if c <= 0.0 {
            return Err(Error::InfeasibleAssignment { device: n, residual: c });
        }
        residual.push(c);
    }
    Ok(residual)
}

// ---------------------------------------------------------------------------
// Relaxed max-min-eigenvalue program
// ---------------------------------------------------------------------------

/// Ties closer than this relative width share the supergradient.
const TIE_REL_TOL: f64 = 1e-9;
/// Probe step for the projected supergradient-mapping norm.
const MAPPING_PROBE: f64 = 1e-3;
const SDP_EPOCHS: usize = 5;

struct Objective<'a> {
    channels: &'a ChannelSet,
    residual: &'a [f64],
}

impl Objective<'_> {
    /// Value `min_n c_n lambda_min(H_n^H Ghat H_n)` and one Clarke
    /// supergradient: minimal-eigenspace outer products averaged over tied
    /// eigenvalues and tied devices.
    fn value_and_supergradient(&self, g_hat: &ComplexMatrix) -> Result<(f64, ComplexMatrix)> {
        let n_rx = g_hat.rows();
        let mut values = Vec::with_capacity(self.channels.num_devices());
        let mut eigens = Vec::with_capacity(self.channels.num_devices());
        for (h, &c) in self.channels.iter().zip(self.residual) {
            let projected = h.adjoint().mul(g_hat).mul(h);
            let eigen = hermitian_eig(&projected)?;
            values.push(c * eigen.eigenvalues.last().unwrap());
            eigens.push(eigen);
        }
        let t = values.iter().cloned().fold(f64::INFINITY, f64::min);

        let tie_width = TIE_REL_TOL * t.abs().max(1e-30);
        let mut grad = ComplexMatrix::zeros(n_rx, n_rx);
        let mut tied = 0usize;
        for (n, (&value, eigen)) in values.iter().zip(&eigens).enumerate() {
            if value - t > tie_width {
                continue;
            }
            tied += 1;
            let lambda_min = *eigen.eigenvalues.last().unwrap();
            let eig_width = TIE_REL_TOL * lambda_min.abs().max(1.0);
            let dims = eigen.eigenvalues.len();
            let members: Vec<usize> = (0..dims)
                .filter(|&k| (eigen.eigenvalues[k] - lambda_min).abs() <= eig_width)
                .collect();
            let h = self.channels.device(n);
            let mut outer = ComplexMatrix::zeros(n_rx, n_rx);
            for &k in &members {
                let u = eigen.eigenvectors.col(k);
                let hu = h.matvec(&u); // N_r
                for i in 0..n_rx {
                    for j in 0..n_rx {
                        outer[(i, j)] += hu[i] * hu[j].conj();
                    }
                }
            }
            let weight = self.residual[n] / members.len() as f64;
            grad = grad.add(&outer.scale_re(weight));
        }
        Ok((t, grad.scale_re(1.0 / tied as f64)))
    }
}

/// Solves the relaxed program
/// `max { min_n c_n lambda_min(H_n^H Ghat H_n) : Ghat >= 0, tr Ghat = 1 }`
/// by projected supergradient ascent with annealed `1/sqrt(iter)` steps and
/// random restarts, returning `(Ghat*, alpha_lb = L_0 / t(Ghat*))`.
///
/// The objective is concave (a pointwise minimum of concave minimum-eigenvalue
/// maps), so restarts agree in value; the best iterate is kept. A solve
/// certifies early once the projected supergradient-mapping norm drops below
/// `grad_tol`.
pub fn solve_relaxed_sdp(
    channels: &ChannelSet,
    residual: &[f64],
    energy: &EnergyModel,
    opts: &SdpOptions,
    seed: u64,
    warm_start: Option<&ComplexMatrix>,
) -> Result<(ComplexMatrix, f64)> {
    if residual.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::InvalidArgument {
            operation: "solve_relaxed_sdp",
            detail: "all residual powers must be > 0".to_string(),
        });
    }
    let n_rx = channels.server_antennas();
    let objective = Objective { channels, residual };

    let mut best: Option<(f64, ComplexMatrix)> = None;
    let mut certified = false;
    for restart in 0..opts.restarts.max(1) {
        if certified {
            break;
        }
        let init = if restart == 0 {
            match warm_start {
                Some(g) => g.clone(),
                None => ComplexMatrix::identity(n_rx).scale_re(1.0 / n_rx as f64),
            }
        } else {
            let mut rng = stream_rng(seed, restart as u64);
            let data = complex_gaussian_vec(&mut rng, n_rx * n_rx, Complex64::new(0.0, 0.0), 1.0);
            let x = ComplexMatrix::from_vec(n_rx, n_rx, data);
            let gram = x.mul(&x.adjoint());
            gram.scale_re(1.0 / gram.trace().re)
        };

        let (value, g_hat, ok) = ascend(&objective, init, opts)?;
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, g_hat));
        }
        certified = ok;
    }

    let (value, g_hat) = best.unwrap();
    if value <= 1e-12 {
        return Err(Error::DegenerateChannel { value });
    }
    Ok((g_hat, energy.payload_total as f64 / value))
}

/// One multi-epoch ascent from `init`; returns (best value, best point,
/// certified). Each epoch restarts from the incumbent with a smaller step
/// scale, which drives the step-size floor down geometrically.
fn ascend(
    objective: &Objective<'_>,
    init: ComplexMatrix,
    opts: &SdpOptions,
) -> Result<(f64, ComplexMatrix, bool)> {
    let iters_per_epoch = (opts.max_iters / SDP_EPOCHS).max(1);
    let mut g = psd_trace1_projection(&init)?;
    let (mut best_value, mut grad) = objective.value_and_supergradient(&g)?;
    let mut best = g.clone();
    let mut scale = 0.5;

    for _epoch in 0..SDP_EPOCHS {
        for k in 0..iters_per_epoch {
            let norm = grad.frob_norm();
            if norm < 1e-15 {
                break;
            }
            let step = scale / ((k + 1) as f64).sqrt();
            g = psd_trace1_projection(&g.add(&grad.scale_re(step / norm)))?;
            let (value, next_grad) = objective.value_and_supergradient(&g)?;
            if value > best_value {
                best_value = value;
                best = g.clone();
            }
            grad = next_grad;
        }
        // Re-center on the incumbent and check the mapping norm there.
        g = best.clone();
        let (_, best_grad) = objective.value_and_supergradient(&best)?;
        let mapped = psd_trace1_projection(&best.add(&best_grad.scale_re(MAPPING_PROBE)))?;
        let mapping_norm = mapped.sub(&best).frob_norm() / MAPPING_PROBE;
        if mapping_norm < opts.grad_tol {
            return Ok((best_value, best, true));
        }
        grad = best_grad;
        scale *= 0.25;
    }
    Ok((best_value, best, false))
}

// ---------------------------------------------------------------------------
// Scale recovery for a rank-L beamformer
// ---------------------------------------------------------------------------

/// Per-device minimal scales
/// `alpha_n = L_0 tr((G^H H_n H_n^H G)^{-1}) / (L c_n)`.
pub fn alpha_requirements(
    g: &ComplexMatrix,
    channels: &ChannelSet,
    residual: &[f64],
    energy: &EnergyModel,
) -> Result<Vec<f64>> {
    let trace = g.gram_trace();
    if (trace - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument {
            operation: "alpha_requirements",
            detail: format!("tr(G G^H) = {trace}, expected 1"),
        });
    }
    let payload_ratio = energy.payload_total as f64 / energy.payload_per_round as f64;
    let mut requirements = Vec::with_capacity(channels.num_devices());
    for (n, (h, &c)) in channels.iter().zip(residual).enumerate() {
        let effective = g.adjoint().mul(h); // L x N_t
        let gram = effective.mul(&effective.adjoint());
        let eigen = hermitian_eig(&gram)?;
        let max = eigen.eigenvalues[0];
        let min = *eigen.eigenvalues.last().unwrap();
        if !(min > 0.0) || max / min > 1e12 {
            return Err(Error::InfeasibleDirection { device: n });
        }
        let trace_inverse: f64 = eigen.eigenvalues.iter().map(|&l| 1.0 / l).sum();
        requirements.push(payload_ratio * trace_inverse / c);
    }
    Ok(requirements)
}

/// Smallest scale meeting every device's energy constraint for beamformer `G`.
pub fn alpha_for_g(
    g: &ComplexMatrix,
    channels: &ChannelSet,
    residual: &[f64],
    energy: &EnergyModel,
) -> Result<f64> {
    let requirements = alpha_requirements(g, channels, residual, energy)?;
    Ok(requirements.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Gaussian randomization: draws rank-`L` candidates `G_k ~ sqrt(Ghat) R_k`
/// (trace-normalized), keeps the feasible candidate with the smallest scale.
/// The dominant-eigenvector factor of `Ghat` is always candidate 0; ties pick
/// the lowest candidate index.
pub fn gaussian_randomization(
    g_hat: &ComplexMatrix,
    channels: &ChannelSet,
    residual: &[f64],
    energy: &EnergyModel,
    num_trials: usize,
    seed: u64,
) -> Result<(ComplexMatrix, f64)> {
    if num_trials == 0 {
        return Err(Error::InvalidArgument {
            operation: "gaussian_randomization",
            detail: "num_trials must be >= 1".to_string(),
        });
    }
    let round_len = energy.payload_per_round as usize;
    let n_rx = g_hat.rows();
    let eigen = hermitian_eig(g_hat)?;
    let norm = g_hat.frob_norm();
    if eigen.eigenvalues.last().unwrap() < &(-1e-6 * norm) {
        return Err(Error::NotPsd { min_eigenvalue: *eigen.eigenvalues.last().unwrap() });
    }

    // Hermitian square root from the same decomposition.
    let roots: Vec<f64> = eigen.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let sqrt = ComplexMatrix::from_fn(n_rx, n_rx, |i, j| {
        (0..n_rx)
            .map(|k| eigen.eigenvectors[(i, k)] * roots[k] * eigen.eigenvectors[(j, k)].conj())
            .sum()
    });

    let mut best: Option<(f64, ComplexMatrix)> = None;
    let mut consider = |candidate: ComplexMatrix| {
        let norm = candidate.frob_norm();
        if norm == 0.0 {
            return;
        }
        let g = candidate.scale_re(1.0 / norm);
        if let Ok(alpha) = alpha_for_g(&g, channels, residual, energy) {
            if best.as_ref().is_none_or(|(a, _)| alpha < *a) {
                best = Some((alpha, g));
            }
        }
    };

    // Candidate 0: dominant eigenvector factor; exact when rank(Ghat) <= L.
    let factor =
        ComplexMatrix::from_fn(n_rx, round_len, |i, k| eigen.eigenvectors[(i, k)] * roots[k]);
    consider(factor);

    let mut rng = stream_rng(seed, 0x52414e44);
    for _ in 0..num_trials {
        let data = complex_gaussian_vec(&mut rng, n_rx * round_len, Complex64::new(0.0, 0.0), 1.0);
        let r = ComplexMatrix::from_vec(n_rx, round_len, data);
        consider(sqrt.mul(&r));
    }

    match best {
        Some((alpha, g)) => Ok((g, alpha)),
        None => Err(Error::RandomizationFailure { trials: num_trials + 1 }),
    }
}

/// Full short-term chain: residual power, relaxed solve, randomization,
/// scaling and zero-forcing precoders. The returned design satisfies every
/// per-device energy constraint (binding device with equality).
pub fn solve_short_term(
    channels: &ChannelSet,
    assignment: &[f64],
    energy: &EnergyModel,
    opts: &ShortTermOptions,
    seed: u64,
) -> Result<ShortTermOutcome> {
    energy.validate()?;
    let residual = residual_power(assignment, energy)?;
    let (g_hat, alpha_lb) =
        solve_relaxed_sdp(channels, &residual, energy, &opts.sdp, seed, opts.warm_start.as_ref())?;
    let trials = opts.rand_trials.max(1);
    let (g, alpha) = gaussian_randomization(&g_hat, channels, &residual, energy, trials, seed)?;
    let aggregation = g.scale_re(alpha.sqrt());
    let precoders = zero_forcing_precoders(&aggregation, channels)?;
    let design = TransceiverDesign { aggregation, precoders };
    let requirements = alpha_requirements(&g, channels, &residual, energy)?;

    #[cfg(debug_assertions)]
    {
        let s_tot = energy.weights_per_layer as f64;
        let comm = design.communication_energies(energy.payload_total, energy.payload_per_round);
        for n in 0..energy.num_devices() {
            let total = energy.energy_coefficients[n] * assignment[n] * s_tot + comm[n];
            debug_assert!(
                total <= energy.power_budgets[n] + 1e-6,
                "device {n} energy {total} exceeds budget {}",
                energy.power_budgets[n]
            );
        }
    }

    Ok(ShortTermOutcome {
        solution: ShortTermSolution {
            normalized_beamformer: g,
            scale: alpha,
            relaxed: g_hat,
            scale_lower_bound: alpha_lb,
        },
        design,
        residual_power: residual,
        alpha_requirements: requirements,
    })
}
