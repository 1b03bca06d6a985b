//! Simulation and optimization workbench for over-the-air all-reduce in
//! tensor-parallel transformer inference.
//!
//! Edge devices hold column/row shards of a transformer's weight matrices and
//! aggregate their partial layer outputs through a MIMO multiple-access
//! channel. The crate provides:
//!
//! - [`numerics`]: complex dense linear algebra (Jacobi Hermitian eigensolver,
//!   pseudo-inverse, simplex and spectrahedron projections),
//! - [`channel`]: seeded i.i.d. Rician block-fading channel sampling,
//! - [`aircomp`]: the analog aggregation chain (zero-forcing precoders,
//!   received-signal model, closed-form and empirical MSE),
//! - [`short_term`]: per-realization transceiver optimization via max-min
//!   eigenvalue relaxation and Gaussian randomization,
//! - [`long_term`]: model-assignment optimization via stochastic successive
//!   convex approximation with gradient tracking,
//! - [`tensorpar`]: a toy sharded transformer with pluggable all-reduce,
//! - [`baselines`]: digital OFDMA and uncoded analog FDMA transports plus an
//!   analytic latency model,
//! - [`harness`]: experiment configuration, seeded sweeps, metrics and the
//!   command-line interface.

// Validation guards compare as `!(x > 0.0)` so that NaN fails alongside
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aircomp;
pub mod baselines;
pub mod channel;
mod error;
pub mod harness;
pub mod long_term;
pub mod numerics;
pub mod rng;
pub mod short_term;
pub mod tensorpar;

pub use error::{Error, Result};
