use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("kernel is not symmetric: a({z:?}) = {forward} but a(-z) = {backward}")]
    AsymmetricKernel {
        z: Vec<i64>,
        forward: f64,
        backward: f64,
    },
    #[error("negative jump intensity {rate} at displacement {z:?}")]
    NegativeIntensity { z: Vec<i64>, rate: f64 },
    #[error("jump support does not generate Z^{dimension}")]
    ZeroSupport { dimension: usize },
    #[error("heavy-tail exponent alpha = {alpha} is outside (0, 2)")]
    TailDivergence { alpha: f64 },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("quadrature did not converge: {0}")]
    QuadratureNotConverged(String),

    #[error("invalid offspring law: {0}")]
    InvalidLaw(String),
    #[error("g_{n} takes {expected} lower moments, got {got}")]
    ArityMismatch {
        n: usize,
        expected: usize,
        got: usize,
    },

    #[error("eigenvalue bracket failure: {0}")]
    BracketFailure(String),

    #[error("truncation radius {radius} too small: boundary leak {leak:e} exceeds {tolerance:e}")]
    TruncationTooSmall {
        radius: usize,
        leak: f64,
        tolerance: f64,
    },
    #[error("integrator failure: {0}")]
    StiffnessFailure(String),
    #[error("trajectory values are not positive on the fit window")]
    NonPositiveValues,
    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("regime {found} does not support this operation (expected {expected})")]
    WrongRegime { expected: String, found: String },
    #[error("every replica hit a population or event cap")]
    AllReplicasTruncated,

    #[error("no asymptote table entry: {0}")]
    UnsupportedCombination(String),
    #[error("convolution tail is not integrable: {0}")]
    TailUnbounded(String),
    #[error("fit window too short: {0}")]
    WindowTooShort(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::AsymmetricKernel { .. }
            | Error::NegativeIntensity { .. }
            | Error::ZeroSupport { .. }
            | Error::TailDivergence { .. }
            | Error::InvalidKernel(_)
            | Error::InvalidLaw(_)
            | Error::InvalidConfig(_) => 2,
            Error::AllReplicasTruncated => 4,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::AsymmetricKernel { .. } => "AsymmetricKernel",
            Error::NegativeIntensity { .. } => "NegativeIntensity",
            Error::ZeroSupport { .. } => "ZeroSupport",
            Error::TailDivergence { .. } => "TailDivergence",
            Error::InvalidKernel(_) => "InvalidKernel",
            Error::QuadratureNotConverged(_) => "QuadratureNotConverged",
            Error::InvalidLaw(_) => "InvalidLaw",
            Error::ArityMismatch { .. } => "ArityMismatch",
            Error::BracketFailure(_) => "BracketFailure",
            Error::TruncationTooSmall { .. } => "TruncationTooSmall",
            Error::StiffnessFailure(_) => "StiffnessFailure",
            Error::NonPositiveValues => "NonPositiveValues",
            Error::DegenerateWindow(_) => "DegenerateWindow",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::WrongRegime { .. } => "WrongRegime",
            Error::AllReplicasTruncated => "AllReplicasTruncated",
            Error::UnsupportedCombination(_) => "UnsupportedCombination",
            Error::TailUnbounded(_) => "TailUnbounded",
            Error::WindowTooShort(_) => "WindowTooShort",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
