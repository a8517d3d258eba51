//! Error types shared across the crate.

use thiserror::Error;

/// Every failure mode in the library, classified for CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("system ({n}x{n}) is not controllable: controllability rank {rank} < {n}")]
    NotControllable { n: usize, rank: usize },

    #[error("compression polynomial is not Schur stable: root magnitudes {0:?}")]
    UnstableCompression(Vec<f64>),

    #[error("gain identity violated: |K2 B - 1| = {k2b_residual:.3e}, ||K2(A+BK1) - K2||_inf = {fixed_point_residual:.3e} (tolerance {tolerance:.1e})")]
    IdentityViolation {
        k2b_residual: f64,
        fixed_point_residual: f64,
        tolerance: f64,
    },

    #[error("sampling period must be positive, got {0}")]
    NonPositivePeriod(f64),

    #[error("graph is not symmetric: edge ({0}, {1}) has no reverse")]
    AsymmetricGraph(usize, usize),

    #[error("edge ({0}, {1}) is not in the union graph")]
    EdgeNotInUnion(usize, usize),

    #[error("graphs disagree on agent count: {0} vs {1}")]
    MismatchedAgentCount(usize, usize),

    #[error("transition matrix is not ergodic (no power up to h^2 is entrywise positive)")]
    NotErgodic,

    #[error("graph is not connected (lambda_2 = {0:.3e})")]
    NotConnected(f64),

    #[error("switching graphs are not jointly connected (lambda_2 of union = {0:.3e})")]
    NotJointlyConnected(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("noise standard deviation must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("projection radius must be positive, got {0}")]
    NonPositiveRadius(f64),

    #[error("bit vector does not match the active-edge mask: {0}")]
    MaskMismatch(String),

    #[error("rate threshold undefined: gamma = {gamma} must exceed 1/lambda_2 = {gamma_min}")]
    GammaTooSmall { gamma: f64, gamma_min: f64 },

    #[error("Lemma-2 bound violated: |K2 x_{agent}({t})| = {value:.6} > M = {m}")]
    BoundViolated { agent: usize, t: u64, value: f64, m: f64 },

    #[error("metric '{0}' is not strictly positive on the fit window")]
    NonPositiveMetric(String),

    #[error("difference-equation coefficients are unstable: root magnitudes {0:?}")]
    UnstableCoefficients(Vec<f64>),

    #[error("trace horizon {horizon} is shorter than the state dimension {n}")]
    InsufficientHorizon { horizon: usize, n: usize },

    #[error("failed to parse scenario: {0}")]
    Parse(String),

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code class: 2 for validation failures, 3 for runtime numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_)
            | Error::Validation(_)
            | Error::NonPositivePeriod(_)
            | Error::NonPositiveSigma(_)
            | Error::NonPositiveRadius(_)
            | Error::MismatchedAgentCount(_, _)
            | Error::EdgeNotInUnion(_, _)
            | Error::Io(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
