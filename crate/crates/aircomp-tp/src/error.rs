use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the workbench.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Matrix/vector shapes do not match the operation's contract.
    Dimension { operation: &'static str, detail: String },
    /// Input violates a symmetry requirement (e.g. Hermitian check).
    NotHermitian { deviation: f64, norm: f64 },
    /// Matrix is not positive semidefinite within tolerance.
    NotPsd { min_eigenvalue: f64 },
    /// An iterative kernel failed to converge.
    NoConvergence { operation: &'static str, detail: String },
    /// The effective channel of a device is too ill-conditioned to invert.
    IllConditionedChannel { device: usize, condition: f64 },
    /// A device's compute energy exceeds its power budget.
    InfeasibleAssignment { device: usize, residual: f64 },
    /// The relaxed beamforming problem has value ~0: some device unreachable.
    DegenerateChannel { value: f64 },
    /// No Gaussian randomization candidate was feasible.
    RandomizationFailure { trials: usize },
    /// A candidate beamformer leaves some device's effective channel singular.
    InfeasibleDirection { device: usize },
    /// Two devices tie for the binding power constraint.
    TiedArgmax { device_a: usize, device_b: usize },
    /// Every sampled channel realization was infeasible.
    GlobalInfeasibility { attempts: usize },
    /// A log-probability is positive.
    InvalidProbability { value: f64 },
    /// An argument is outside the operation's domain.
    InvalidArgument { operation: &'static str, detail: String },
    /// Experiment configuration is malformed.
    Config(String),
    /// File or serialization failure in the harness.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dimension { operation, detail } => {
                write!(f, "{operation}: dimension mismatch: {detail}")
            }
            Self::NotHermitian { deviation, norm } => {
                write!(f, "matrix is not Hermitian: deviation {deviation:.3e} vs norm {norm:.3e}")
            }
            Self::NotPsd { min_eigenvalue } => {
                write!(f, "matrix is not PSD: minimum eigenvalue {min_eigenvalue:.3e}")
            }
            Self::NoConvergence { operation, detail } => {
                write!(f, "{operation} did not converge: {detail}")
            }
            Self::IllConditionedChannel { device, condition } => write!(
                f,
                "effective channel of device {device} ill-conditioned (condition {condition:.3e})"
            ),
            Self::InfeasibleAssignment { device, residual } => write!(
                f,
                "device {device} has no residual power for transmission ({residual:.3e})"
            ),
            Self::DegenerateChannel { value } => {
                write!(f, "relaxed problem degenerate (value {value:.3e}): a device is unreachable")
            }
            Self::RandomizationFailure { trials } => {
                write!(f, "no feasible beamformer among {trials} randomization candidates")
            }
            Self::InfeasibleDirection { device } => {
                write!(f, "beamformer leaves device {device} with a singular effective channel")
            }
            Self::TiedArgmax { device_a, device_b } => {
                write!(f, "devices {device_a} and {device_b} tie for the binding constraint")
            }
            Self::GlobalInfeasibility { attempts } => {
                write!(f, "all {attempts} consecutive channel samples were infeasible")
            }
            Self::InvalidProbability { value } => {
                write!(f, "log-probability {value} is positive")
            }
            Self::InvalidArgument { operation, detail } => {
                write!(f, "{operation}: invalid argument: {detail}")
            }
            Self::Config(msg) => write!(f, "config error: {msg}"),
            Self::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
